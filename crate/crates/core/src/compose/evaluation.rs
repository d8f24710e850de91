//! Evaluation-level compositions: the inferred property proportion
//! calibrates membership scores after the attack has run.

use ndarray::{Array1, Array2};

use crate::attacks::branch::{check_binary, BranchNet};
use crate::attacks::meminf::{branch_inputs, feature_schema, member_labels, MemInfAttackModel, MemInfContext, MemInfOutcome};
use crate::attacks::propinf::PropInfOutput;
use crate::attacks::{AttackFeatureRecord, AttackResult, AttackTrainConfig, MemInfConfig, MemInfSetting};
use crate::data::PropertyProportion;
use crate::error::{Error, Result};
use crate::nn::{gather_rows, sigmoid, Adam, Network};
use crate::seed::{derive_seed, rng_for};

const SCORE_CLAMP: f64 = 1e-6;

/// Encoder from posteriors to the calibration strength lambda, plus the
/// inferred proportion that sets the sign and size of each sample's term.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationHead {
    pub encoder: Network,
    pub inferred_proportion: PropertyProportion,
}

impl CalibrationHead {
    /// Four dense layers `K -> 32 -> 32 -> 16 -> 1`.
    pub fn new(num_classes: usize, inferred_proportion: PropertyProportion, seed: u64) -> Self {
        let mut rng = rng_for(seed);
        Self { encoder: Network::mlp(&[num_classes, 32, 32, 16, 1], &mut rng), inferred_proportion }
    }

    pub fn lambda(&self, posteriors: &Array2<f64>) -> Array1<f64> {
        self.encoder.forward(posteriors).column(0).to_owned()
    }

    /// `P(property) - 0.5`.
    pub fn term(&self, property: usize) -> f64 {
        self.inferred_proportion.get(property) - 0.5
    }

    pub fn calibrate(&self, origin_scores: &[f64], posteriors: &Array2<f64>, properties: &[usize]) -> Vec<f64> {
        let lambda = self.lambda(posteriors);
        origin_scores.iter().zip(&lambda).zip(properties).map(|((s, l), &p)| s + l * self.term(p)).collect()
    }
}

fn posterior_matrix(records: &[AttackFeatureRecord]) -> Array2<f64> {
    let k = records.first().map_or(0, |r| r.ranked_posteriors.len());
    Array2::from_shape_fn((records.len(), k), |(i, j)| records[i].ranked_posteriors[j])
}

/// Gradients of the cross-entropy of `s = sigmoid(z) + lambda * t` w.r.t.
/// `z` and `lambda`. The score is clamped inside the loss; with a zero
/// calibration term this reduces to the plain logistic gradient.
fn calibrated_grads(z: f64, lambda: f64, t: f64, y: f64) -> (f64, f64) {
    let sig = sigmoid(z);
    let s = sig + lambda * t;
    if s == sig {
        return (sig - y, 0.0);
    }
    if !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&s) {
        return (0.0, 0.0);
    }
    let ds = (s - y) / (s * (1.0 - s));
    (ds * sig * (1.0 - sig), ds * t)
}

/// Train the attack model and the calibration head jointly on the
/// cross-entropy of the calibrated score.
pub fn train_calibrated(
    records: &[AttackFeatureRecord],
    setting: MemInfSetting,
    config: &AttackTrainConfig,
    inferred: &PropertyProportion,
) -> Result<(MemInfAttackModel, CalibrationHead)> {
    let access = setting.access();
    let labels = member_labels(records)?;
    check_binary(&labels)?;
    let inputs = branch_inputs(records, access)?;
    let mut net = BranchNet::init(&inputs, config);
    let posts = posterior_matrix(records);
    let mut head = CalibrationHead::new(posts.ncols(), inferred.clone(), derive_seed(config.seed, "calibration_init", 0));
    let terms: Vec<f64> = records.iter().map(|r| head.term(r.property)).collect();
    let mut adam = Adam::new(config.learning_rate, head.encoder.param_count());
    let mut hook = |batch: &[usize], z: &Array1<f64>| -> Array1<f64> {
        let (lam, trace) = head.encoder.forward_trace(&gather_rows(&posts, batch));
        let mut dz = Array1::zeros(batch.len());
        let mut dl = Array2::zeros((batch.len(), 1));
        for (k, &i) in batch.iter().enumerate() {
            let (gz, gl) = calibrated_grads(z[k], lam[[k, 0]], terms[i], labels[i] as f64);
            dz[k] = gz;
            dl[[k, 0]] = gl / batch.len() as f64;
        }
        let (grad, _) = head.encoder.backward(&trace, &dl);
        adam.step(&mut head.encoder, &grad);
        dz
    };
    net.train(&inputs, &labels, config, Some(&mut hook))?;
    if head.encoder.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::DivergedTraining { epoch: config.epochs });
    }
    Ok((MemInfAttackModel { net, access, schema: feature_schema(records, access) }, head))
}

#[derive(Clone, Debug)]
pub struct CalibratedOutcome {
    /// The standalone attack.
    pub origin: MemInfOutcome,
    /// Calibrated scores and their metrics.
    pub result: AttackResult,
    /// Score of the jointly trained attack model before calibration.
    pub origin_component: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `P(property) - 0.5` per evaluation sample.
    pub terms: Vec<f64>,
    pub head: Option<CalibrationHead>,
}

impl CalibratedOutcome {
    /// The averaged form `(1/N) * sum(P_i - 0.5)` over the evaluation set.
    pub fn mean_term(&self) -> f64 {
        if self.terms.is_empty() {
            0.0
        } else {
            self.terms.iter().sum::<f64>() / self.terms.len() as f64
        }
    }
}

/// `s_i * prior[property_i]`.
pub fn propinf_to_lira(scores: &[f64], property_of: &[usize], prior: &PropertyProportion) -> Vec<f64> {
    assert_eq!(scores.len(), property_of.len(), "one property per score");
    scores.iter().zip(property_of).map(|(s, &p)| s * prior.get(p)).collect()
}

/// PropInf -> MemInf. Classifier settings add `lambda(posteriors) * (P - 0.5)`
/// to the score of a jointly trained attack model and threshold at 0.5; the
/// LiRA setting scales its scores by the prior instead.
pub fn propinf_to_meminf(ctx: &MemInfContext<'_>, inferred: Option<&PropInfOutput>, config: &MemInfConfig) -> Result<CalibratedOutcome> {
    let inferred = inferred.ok_or_else(|| Error::MissingPropInf("no inferred proportion supplied".into()))?;
    let prior = &inferred.predicted;
    if prior.len() != ctx.target.meta.num_properties {
        return Err(Error::ShapeMismatch(format!(
            "inferred proportion covers {} values, dataset has {}",
            prior.len(),
            ctx.target.meta.num_properties
        )));
    }
    let origin = ctx.run(None, config)?;
    if ctx.setting == MemInfSetting::LiraShadow {
        let eval = ctx.split.eval_samples();
        let properties: Vec<usize> = eval.iter().map(|s| s.property).collect();
        let scores = propinf_to_lira(&origin.result.scores, &properties, prior);
        let predictions = scores.iter().map(|&s| usize::from(s > 0.0)).collect();
        let result = AttackResult::binary("propinf_to_lira", scores, predictions, origin.result.ground_truth.clone())?;
        let terms = properties.iter().map(|&p| prior.get(p)).collect();
        return Ok(CalibratedOutcome { origin_component: origin.result.scores.clone(), origin, result, lambda: Vec::new(), terms, head: None });
    }
    let (model, head) = train_calibrated(&origin.train_records, ctx.setting, &config.attack, prior)?;
    let eval = &origin.eval_records;
    let origin_component = model.scores(eval)?;
    let posts = posterior_matrix(eval);
    let lambda = head.lambda(&posts).to_vec();
    let terms: Vec<f64> = eval.iter().map(|r| head.term(r.property)).collect();
    let properties: Vec<usize> = eval.iter().map(|r| r.property).collect();
    let scores = head.calibrate(&origin_component, &posts, &properties);
    let predictions = scores.iter().map(|&s| usize::from(s >= 0.5)).collect();
    let result = AttackResult::binary("propinf_to_meminf", scores, predictions, member_labels(eval)?)?;
    Ok(CalibratedOutcome { origin, result, origin_component, lambda, terms, head: Some(head) })
}
