//! Membership inference under the five threat settings: black- or white-box
//! access combined with shadow data or partial training data, plus LiRA.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adv::{adv_l2_profile, distances, AdvMode};
use super::branch::{check_binary, AttackTrainConfig, BranchNet};
use super::lira::{lira_attack, train_lira_fleet, LiraAux, LiraFleet};
use super::AttackResult;
use crate::data::{DatasetBundle, Sample};
use crate::error::{Error, Result};
use crate::models::{train_model, ModelConfig, TrainedModel, WhiteBox};
use crate::seed::{derive_seed, json_hash};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    BlackBox,
    WhiteBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemInfSetting {
    /// Black-box target, shadow data.
    BbShadow,
    /// Black-box target, partial training data.
    BbPartial,
    /// White-box target, shadow data.
    WbShadow,
    /// White-box target, partial training data.
    WbPartial,
    /// Likelihood-ratio attack, shadow data.
    LiraShadow,
}

impl MemInfSetting {
    pub const ALL: [MemInfSetting; 5] = [Self::BbShadow, Self::BbPartial, Self::WbShadow, Self::WbPartial, Self::LiraShadow];
    pub const CLASSIFIERS: [MemInfSetting; 4] = [Self::BbShadow, Self::BbPartial, Self::WbShadow, Self::WbPartial];

    pub fn access(self) -> Access {
        match self {
            Self::WbShadow | Self::WbPartial => Access::WhiteBox,
            _ => Access::BlackBox,
        }
    }

    pub fn uses_shadow_data(self) -> bool {
        matches!(self, Self::BbShadow | Self::WbShadow | Self::LiraShadow)
    }

    pub fn is_classifier(self) -> bool {
        self != Self::LiraShadow
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BbShadow => "bb_shadow",
            Self::BbPartial => "bb_partial",
            Self::WbShadow => "wb_shadow",
            Self::WbPartial => "wb_partial",
            Self::LiraShadow => "lira_shadow",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Input of a membership attack model for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackFeatureRecord {
    pub sample_id: u64,
    pub property: usize,
    /// Posteriors sorted in descending order.
    pub ranked_posteriors: Vec<f64>,
    pub correct: u8,
    pub loss: Option<f64>,
    pub last_layer_gradient: Option<Vec<f64>>,
    pub onehot_label: Option<Vec<f64>>,
    pub adv_l2: Option<f64>,
    /// Whether the adversarial search flipped the label within budget.
    pub adv_flipped: Option<bool>,
    pub member: Option<u8>,
}

/// Features of `members` then `nonmembers` as seen through `model`.
/// Black-box records carry ranked posteriors and the correctness bit;
/// white-box records add loss, last-layer gradient and one-hot label.
/// `adv` holds one (distance, flipped) pair per member then per nonmember.
pub fn build_meminf_features(
    model: &impl WhiteBox,
    members: &[Sample],
    nonmembers: &[Sample],
    access: Access,
    adv: Option<&[(f64, bool)]>,
) -> Result<Vec<AttackFeatureRecord>> {
    let member_ids: HashSet<u64> = members.iter().map(|s| s.id).collect();
    if nonmembers.iter().any(|s| member_ids.contains(&s.id)) {
        return Err(Error::InvalidSpec("members and nonmembers overlap".into()));
    }
    if let Some(a) = adv {
        if a.len() != members.len() + nonmembers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} adversarial distances for {} samples",
                a.len(),
                members.len() + nonmembers.len()
            )));
        }
    }
    let all: Vec<Sample> = members.iter().chain(nonmembers).cloned().collect();
    let views = model.views(&all);
    Ok(views
        .into_iter()
        .zip(&all)
        .enumerate()
        .map(|(i, (v, s))| {
            let mut ranked = v.posteriors.clone();
            ranked.sort_by(|a, b| b.total_cmp(a));
            let white = access == Access::WhiteBox;
            let k = v.posteriors.len();
            AttackFeatureRecord {
                sample_id: s.id,
                property: s.property,
                ranked_posteriors: ranked,
                correct: u8::from(v.predicted_label == s.task_label),
                loss: white.then_some(v.loss),
                last_layer_gradient: white.then(|| v.last_layer_gradient.clone()),
                onehot_label: white.then(|| (0..k).map(|c| f64::from(u8::from(c == s.task_label))).collect()),
                adv_l2: adv.map(|a| a[i].0),
                adv_flipped: adv.map(|a| a[i].1),
                member: Some(u8::from(i < members.len())),
            }
        })
        .collect())
}

/// Branch names and widths of the attack model input, in order.
pub fn feature_schema(records: &[AttackFeatureRecord], access: Access) -> Vec<(String, usize)> {
    let Some(r) = records.first() else { return Vec::new() };
    let mut schema = vec![("ranked_posteriors".to_string(), r.ranked_posteriors.len())];
    match access {
        Access::BlackBox => schema.push(("correct".into(), 1)),
        Access::WhiteBox => {
            schema.push(("loss".into(), 1));
            schema.push(("last_layer_gradient".into(), r.last_layer_gradient.as_ref().map_or(0, Vec::len)));
            schema.push(("onehot_label".into(), r.onehot_label.as_ref().map_or(0, Vec::len)));
        }
    }
    if r.adv_l2.is_some() {
        schema.push(("adv_l2".into(), 1));
    }
    schema
}

pub fn feature_schema_hash(records: &[AttackFeatureRecord], access: Access) -> String {
    json_hash(&feature_schema(records, access))
}

fn matrix(rows: usize, cols: usize, f: impl Fn(usize, &mut [f64])) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        f(i, row.as_slice_mut().expect("row-major"));
    }
    m
}

/// One matrix per branch, following [`feature_schema`].
pub fn branch_inputs(records: &[AttackFeatureRecord], access: Access) -> Result<Vec<Array2<f64>>> {
    let schema = feature_schema(records, access);
    let n = records.len();
    let mut out = Vec::with_capacity(schema.len());
    for (name, width) in &schema {
        let missing = || Error::ShapeMismatch(format!("record lacks {name}"));
        for r in records {
            let ok = match name.as_str() {
                "loss" => r.loss.is_some(),
                "last_layer_gradient" => r.last_layer_gradient.as_ref().is_some_and(|g| g.len() == *width),
                "onehot_label" => r.onehot_label.as_ref().is_some_and(|g| g.len() == *width),
                "adv_l2" => r.adv_l2.is_some(),
                "ranked_posteriors" => r.ranked_posteriors.len() == *width,
                _ => true,
            };
            if !ok {
                return Err(missing());
            }
        }
        out.push(matrix(n, *width, |i, row| {
            let r = &records[i];
            match name.as_str() {
                "ranked_posteriors" => row.copy_from_slice(&r.ranked_posteriors),
                "correct" => row[0] = f64::from(r.correct),
                "loss" => row[0] = r.loss.unwrap_or_default(),
                "last_layer_gradient" => row.copy_from_slice(r.last_layer_gradient.as_deref().unwrap_or_default()),
                "onehot_label" => row.copy_from_slice(r.onehot_label.as_deref().unwrap_or_default()),
                "adv_l2" => row[0] = r.adv_l2.unwrap_or_default(),
                _ => unreachable!(),
            }
        }));
    }
    Ok(out)
}

pub fn member_labels(records: &[AttackFeatureRecord]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| r.member.map(usize::from).ok_or_else(|| Error::DegenerateLabels("record without member bit".into())))
        .collect()
}

/// Trained membership classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MemInfAttackModel {
    pub net: BranchNet,
    pub access: Access,
    pub schema: Vec<(String, usize)>,
}

impl MemInfAttackModel {
    pub fn scores(&self, records: &[AttackFeatureRecord]) -> Result<Vec<f64>> {
        let schema = feature_schema(records, self.access);
        if schema != self.schema {
            return Err(Error::ShapeMismatch(format!("records have schema {schema:?}, model expects {:?}", self.schema)));
        }
        Ok(self.net.scores(&branch_inputs(records, self.access)?))
    }
}

/// Fit the branch attack model: one two-layer branch per input group and a
/// four-layer head; an `adv_l2` branch is added when the records carry it.
pub fn train_meminf_attack_model(
    records: &[AttackFeatureRecord],
    access: Access,
    config: &AttackTrainConfig,
) -> Result<MemInfAttackModel> {
    let labels = member_labels(records)?;
    check_binary(&labels)?;
    let inputs = branch_inputs(records, access)?;
    let net = BranchNet::fit(&inputs, &labels, config)?;
    Ok(MemInfAttackModel { net, access, schema: feature_schema(records, access) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemInfConfig {
    pub attack: AttackTrainConfig,
    /// Shadow models for LiRA; each eval sample is in exactly half of them.
    pub lira_models: usize,
    pub seed: u64,
}

impl Default for MemInfConfig {
    fn default() -> Self {
        Self { attack: AttackTrainConfig::default(), lira_models: 8, seed: 0 }
    }
}

/// Attack-training and evaluation samples of one setting, each balanced
/// between members and nonmembers by truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct MemInfSplit {
    pub train_members: Vec<Sample>,
    pub train_nonmembers: Vec<Sample>,
    pub eval_members: Vec<Sample>,
    pub eval_nonmembers: Vec<Sample>,
}

fn balanced(a: &[Sample], b: &[Sample]) -> (Vec<Sample>, Vec<Sample>) {
    let n = a.len().min(b.len());
    (a[..n].to_vec(), b[..n].to_vec())
}

impl MemInfSplit {
    /// Shadow settings learn from shadow_train/shadow_test. Partial settings
    /// learn from partial_aux (members) and shadow_test (nonmembers) and are
    /// evaluated on the rest of target_train. Evaluation nonmembers are always
    /// target_test.
    pub fn new(bundle: &DatasetBundle, setting: MemInfSetting) -> Result<Self> {
        let (train_members, train_nonmembers, eval_member_pool) = if setting.uses_shadow_data() {
            if bundle.shadow_train.is_empty() || bundle.shadow_test.is_empty() {
                return Err(Error::MissingAuxiliary(format!("{} needs shadow partitions", setting.name())));
            }
            let (m, n) = balanced(&bundle.shadow_train, &bundle.shadow_test);
            (m, n, bundle.target_train.clone())
        } else {
            if bundle.partial_aux.is_empty() || bundle.shadow_test.is_empty() {
                return Err(Error::MissingAuxiliary(format!("{} needs partial training data", setting.name())));
            }
            let (m, n) = balanced(&bundle.partial_aux, &bundle.shadow_test);
            let known: HashSet<u64> = bundle.partial_aux.iter().map(|s| s.id).collect();
            let rest = bundle.target_train.iter().filter(|s| !known.contains(&s.id)).cloned().collect();
            (m, n, rest)
        };
        let (eval_members, eval_nonmembers) = balanced(&eval_member_pool, &bundle.target_test);
        if eval_members.is_empty() {
            return Err(Error::InsufficientSamples(format!("{} has no evaluation members", setting.name())));
        }
        let split = Self { train_members, train_nonmembers, eval_members, eval_nonmembers };
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let train: HashSet<u64> = self.train_members.iter().chain(&self.train_nonmembers).map(|s| s.id).collect();
        if self.eval_members.iter().chain(&self.eval_nonmembers).any(|s| train.contains(&s.id)) {
            return Err(Error::InvalidSpec("attack-training and evaluation samples overlap".into()));
        }
        Ok(())
    }

    pub fn eval_samples(&self) -> Vec<Sample> {
        self.eval_members.iter().chain(&self.eval_nonmembers).cloned().collect()
    }

    pub fn eval_truth(&self) -> Vec<usize> {
        std::iter::repeat_n(1, self.eval_members.len()).chain(std::iter::repeat_n(0, self.eval_nonmembers.len())).collect()
    }

    pub fn hash(&self) -> String {
        let ids = |v: &[Sample]| v.iter().map(|s| s.id).collect::<Vec<_>>();
        json_hash(&[ids(&self.train_members), ids(&self.train_nonmembers), ids(&self.eval_members), ids(&self.eval_nonmembers)])
    }
}

/// Everything an attack run in one setting needs besides its features.
#[derive(Clone, Debug)]
pub struct MemInfContext<'a> {
    pub target: &'a TrainedModel,
    pub setting: MemInfSetting,
    pub split: MemInfSplit,
    pub shadow: Option<TrainedModel>,
    pub lira: Option<LiraFleet>,
    /// Protocol events, e.g. `train_shadow`.
    pub trace: Vec<String>,
    pub seed: u64,
}

/// Split the bundle and train whatever shadow models the setting calls for.
/// Partial settings never train a shadow model.
pub fn prepare_meminf<'a>(
    target: &'a TrainedModel,
    bundle: &DatasetBundle,
    setting: MemInfSetting,
    config: &MemInfConfig,
) -> Result<MemInfContext<'a>> {
    let split = MemInfSplit::new(bundle, setting)?;
    let mut trace = vec![format!("split:{}", split.hash())];
    let mut shadow = None;
    let mut lira = None;
    let shadow_config = |index: u64| ModelConfig {
        seed: derive_seed(config.seed, "shadow_model", index),
        ..target.config.clone()
    };
    match setting {
        MemInfSetting::BbShadow | MemInfSetting::WbShadow => {
            trace.push("train_shadow".into());
            shadow = Some(train_model(&shadow_config(0), target.meta, &bundle.shadow_train, &bundle.shadow_test)?);
        }
        MemInfSetting::LiraShadow => {
            trace.push("train_lira_fleet".into());
            let mut pool = bundle.shadow_train.clone();
            pool.extend(split.eval_samples());
            lira = Some(train_lira_fleet(
                &shadow_config(1),
                target.meta,
                &pool,
                &bundle.shadow_test,
                config.lira_models,
                derive_seed(config.seed, "lira_fleet", 0),
            )?);
        }
        MemInfSetting::BbPartial | MemInfSetting::WbPartial => {}
    }
    Ok(MemInfContext { target, setting, split, shadow, lira, trace, seed: config.seed })
}

#[derive(Clone, Debug)]
pub struct MemInfOutcome {
    pub result: AttackResult,
    pub train_records: Vec<AttackFeatureRecord>,
    pub eval_records: Vec<AttackFeatureRecord>,
    pub attack_model: Option<MemInfAttackModel>,
    /// LiRA scores before orientation (negative favors membership).
    pub lira_raw: Option<Vec<f64>>,
    pub trace: Vec<String>,
}

fn adv_pairs(model: &TrainedModel, samples: &[Sample], mode: &AdvMode, seed: u64) -> Vec<(f64, bool)> {
    adv_l2_profile(model, samples, mode, seed).iter().map(|r| (r.l2_distance, r.flipped)).collect()
}

impl MemInfContext<'_> {
    /// The model the attack-training features come from.
    pub fn feature_model(&self) -> &TrainedModel {
        self.shadow.as_ref().unwrap_or(self.target)
    }

    /// Labeled attack-training records and evaluation records.
    pub fn records(&self, adv: Option<&AdvMode>) -> Result<(Vec<AttackFeatureRecord>, Vec<AttackFeatureRecord>)> {
        let access = self.setting.access();
        let s = &self.split;
        let train_all: Vec<Sample> = s.train_members.iter().chain(&s.train_nonmembers).cloned().collect();
        let eval_all = s.eval_samples();
        let (adv_train, adv_eval) = match adv {
            Some(mode) => (
                Some(adv_pairs(self.feature_model(), &train_all, mode, derive_seed(self.seed, "adv_train", 0))),
                Some(adv_pairs(self.target, &eval_all, mode, derive_seed(self.seed, "adv_eval", 0))),
            ),
            None => (None, None),
        };
        let train = build_meminf_features(self.feature_model(), &s.train_members, &s.train_nonmembers, access, adv_train.as_deref())?;
        let eval = build_meminf_features(self.target, &s.eval_members, &s.eval_nonmembers, access, adv_eval.as_deref())?;
        Ok((train, eval))
    }

    /// Run the attack, optionally with the adversarial-distance feature.
    pub fn run(&self, adv: Option<&AdvMode>, config: &MemInfConfig) -> Result<MemInfOutcome> {
        let mut trace = self.trace.clone();
        if self.setting == MemInfSetting::LiraShadow {
            let fleet = self.lira.as_ref().ok_or_else(|| Error::MissingFleet("LiRA needs shadow models".into()))?;
            let eval = self.split.eval_samples();
            let aux = match adv {
                Some(mode) => {
                    trace.push("adv_profile".into());
                    Some(LiraAux::from_adv(self.target, fleet, &eval, mode, derive_seed(self.seed, "lira_adv", 0)))
                }
                None => None,
            };
            let out = lira_attack(self.target, fleet, &eval, &self.split.eval_truth(), aux.as_ref())?;
            trace.push("lira_score".into());
            return Ok(MemInfOutcome {
                result: out.result,
                train_records: Vec::new(),
                eval_records: Vec::new(),
                attack_model: None,
                lira_raw: Some(out.raw_scores),
                trace,
            });
        }
        let (train, eval) = self.records(adv)?;
        trace.push("train_attack_model".into());
        let model = train_meminf_attack_model(&train, self.setting.access(), &config.attack)?;
        let scores = model.scores(&eval)?;
        let predictions = scores.iter().map(|&s| usize::from(s >= 0.5)).collect();
        let result = AttackResult::binary(self.setting.name(), scores, predictions, member_labels(&eval)?)?;
        Ok(MemInfOutcome { result, train_records: train, eval_records: eval, attack_model: Some(model), lira_raw: None, trace })
    }
}

/// Membership inference against `target` in one threat setting.
pub fn meminf_attack(
    target: &TrainedModel,
    bundle: &DatasetBundle,
    setting: MemInfSetting,
    adv: Option<&AdvMode>,
    config: &MemInfConfig,
) -> Result<MemInfOutcome> {
    prepare_meminf(target, bundle, setting, config)?.run(adv, config)
}

/// Per-sample adversarial distances of a profile, for diagnostics.
pub fn adv_distances(model: &TrainedModel, samples: &[Sample], mode: &AdvMode, seed: u64) -> Vec<f64> {
    distances(&adv_l2_profile(model, samples, mode, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, partition_dataset, PartitionSpec, SyntheticSpec};
    use crate::models::{Architecture, ModelConfig};

    fn tiny() -> (DatasetBundle, TrainedModel) {
        let spec = SyntheticSpec { n_samples: 240, noise: 0.9, ..SyntheticSpec::default() };
        let (meta, s) = generate(&spec, 1).unwrap();
        let b = partition_dataset(&s, meta, &PartitionSpec::balanced(2), 1).unwrap();
        let mut c = ModelConfig::new(Architecture::Mlp, 1);
        c.max_epochs = 3;
        let m = train_model(&c, meta, &b.target_train, &b.target_test).unwrap();
        (b, m)
    }

    #[test]
    fn ranked_posteriors_and_correct_bit() {
        let (b, m) = tiny();
        let recs = build_meminf_features(&m, &b.target_train[..5], &b.target_test[..7], Access::WhiteBox, None).unwrap();
        assert_eq!(recs.iter().filter(|r| r.member == Some(1)).count(), 5);
        assert_eq!(recs.iter().filter(|r| r.member == Some(0)).count(), 7);
        let views = m.views(&b.target_train[..5]);
        for (r, (v, s)) in recs.iter().zip(views.iter().zip(&b.target_train)) {
            assert!(r.ranked_posteriors.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(r.correct == 1, v.predicted_label == s.task_label);
            assert_eq!(r.onehot_label.as_ref().unwrap()[s.task_label], 1.0);
        }
        let bb = build_meminf_features(&m, &b.target_train[..2], &b.target_test[..2], Access::BlackBox, None).unwrap();
        assert!(bb.iter().all(|r| r.loss.is_none() && r.last_layer_gradient.is_none()));
        assert!(build_meminf_features(&m, &b.target_train[..2], &b.target_test[..2], Access::BlackBox, Some(&[(0.0, false)])).is_err());
    }

    #[test]
    fn posterior_sort_example() {
        let mut p: Vec<f64> = vec![0.2, 0.5, 0.3];
        p.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(p, vec![0.5, 0.3, 0.2]);
    }

    #[test]
    fn partial_settings_never_train_a_shadow() {
        let (b, m) = tiny();
        let ctx = prepare_meminf(&m, &b, MemInfSetting::BbPartial, &MemInfConfig::default()).unwrap();
        assert!(ctx.shadow.is_none() && ctx.lira.is_none());
        assert!(!ctx.trace.iter().any(|t| t.starts_with("train_shadow")));
        let s = &ctx.split;
        assert_eq!(s.eval_members.len(), s.eval_nonmembers.len());
        s.check_disjoint().unwrap();
    }

    #[test]
    fn perfectly_separated_records_are_learned() {
        let k = 4;
        let records: Vec<AttackFeatureRecord> = (0..200)
            .map(|i| {
                let member = i % 2 == 0;
                let ranked = if member { vec![1.0, 0.0, 0.0, 0.0] } else { vec![1.0 / k as f64; k] };
                AttackFeatureRecord {
                    sample_id: i,
                    property: 0,
                    ranked_posteriors: ranked,
                    correct: u8::from(member),
                    loss: None,
                    last_layer_gradient: None,
                    onehot_label: None,
                    adv_l2: None,
                    adv_flipped: None,
                    member: Some(u8::from(member)),
                }
            })
            .collect();
        let model = train_meminf_attack_model(&records, Access::BlackBox, &AttackTrainConfig::default()).unwrap();
        let scores = model.scores(&records).unwrap();
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        let acc = scores.iter().zip(&records).filter(|(s, r)| (**s >= 0.5) == (r.member == Some(1))).count() as f64 / 200.0;
        assert!(acc >= 0.99, "{acc}");
        let again = train_meminf_attack_model(&records, Access::BlackBox, &AttackTrainConfig::default()).unwrap();
        assert_eq!(again, model);
        let single: Vec<_> = records.iter().filter(|r| r.member == Some(1)).cloned().collect();
        assert!(matches!(train_meminf_attack_model(&single, Access::BlackBox, &AttackTrainConfig::default()), Err(Error::DegenerateLabels(_))));
    }
}
