//! Property inference: fingerprint models by their posteriors on the query
//! sets and classify the fingerprint into a proportion label.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adv::{adv_l2_profile, AdvMode};
use super::attrinf::{ClassifierConfig, DenseClassifier};
use super::AttackResult;
use crate::data::{feature_matrix, PropertyProportion, Sample};
use crate::error::{Error, Result};
use crate::models::{argmax, BlackBox, FleetMember, TrainedModel};
use crate::seed::derive_seed;

pub type QueryAux = BTreeMap<PropertyProportion, Vec<Sample>>;

/// Posteriors on every query sample, ordered by proportion, then sample,
/// then class. With `adv`, the adversarial L2 distance of every query
/// sample follows in the same sample order.
pub fn propinf_features(model: &TrainedModel, query_aux: &QueryAux, adv: Option<&AdvMode>, seed: u64) -> Vec<f64> {
    let samples: Vec<Sample> = query_aux.values().flatten().cloned().collect();
    let mut out: Vec<f64> = model.posteriors(&feature_matrix(&samples)).iter().copied().collect();
    if let Some(mode) = adv {
        out.extend(adv_l2_profile(model, &samples, mode, derive_seed(seed, "propinf_adv", 0)).iter().map(|r| r.l2_distance));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropInfConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for PropInfConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 1e-2, l2: 1e-3, seed: 0 }
    }
}

/// Multinomial logistic regression over standardized fingerprints.
/// Columns constant across the training fleet are dropped, so a widened
/// fingerprint whose extra columns never vary trains the same classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaClassifier {
    pub labels: Vec<PropertyProportion>,
    pub classifier: DenseClassifier,
    /// Fingerprint length before column selection.
    pub input_dim: usize,
    /// Indices of the columns the classifier sees.
    pub columns: Vec<usize>,
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("fingerprints differ in length".into()));
    }
    Ok(Array2::from_shape_vec((rows.len(), d), rows.concat()).expect("checked lengths"))
}

impl MetaClassifier {
    pub fn fit(features: &[Vec<f64>], labels: &[PropertyProportion], config: &PropInfConfig) -> Result<Self> {
        let mut grid: Vec<PropertyProportion> = labels.to_vec();
        grid.sort();
        grid.dedup();
        if grid.len() < 2 {
            return Err(Error::MissingFleet(format!("fleet covers {} proportion label(s), need 2", grid.len())));
        }
        let y: Vec<usize> = labels.iter().map(|l| grid.binary_search(l).expect("in grid")).collect();
        let cfg = ClassifierConfig {
            hidden: Vec::new(),
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            batch_size: 0,
            l2: config.l2,
            seed: config.seed,
        };
        let x = to_matrix(features)?;
        let mut columns: Vec<usize> = (0..x.ncols()).filter(|&j| x.column(j).iter().any(|&v| v != x[[0, j]])).collect();
        if columns.is_empty() {
            columns = (0..x.ncols()).collect();
        }
        let classifier = DenseClassifier::fit(&x.select(Axis(1), &columns), &y, grid.len(), &cfg)?;
        Ok(Self { labels: grid, classifier, input_dim: x.ncols(), columns })
    }

    pub fn probabilities(&self, features: &[Vec<f64>]) -> Result<Array2<f64>> {
        let x = to_matrix(features)?;
        if x.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!("fingerprint of length {}, expected {}", x.ncols(), self.input_dim)));
        }
        Ok(self.classifier.probabilities(&x.select(Axis(1), &self.columns)))
    }

    pub fn predict(&self, features: &[f64]) -> Result<PropInfOutput> {
        let p = self.probabilities(&[features.to_vec()])?;
        let posterior = p.row(0).to_vec();
        let index = argmax(&posterior);
        Ok(PropInfOutput {
            predicted: self.labels[index].clone(),
            confidence: posterior[index],
            posterior,
            labels: self.labels.clone(),
        })
    }
}

/// Inferred training proportion of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropInfOutput {
    pub predicted: PropertyProportion,
    /// Meta-classifier posterior of `predicted`.
    pub confidence: f64,
    pub posterior: Vec<f64>,
    pub labels: Vec<PropertyProportion>,
}

impl PropInfOutput {
    /// A fixed inference, e.g. for a zero-information support.
    pub fn fixed(predicted: PropertyProportion, confidence: f64) -> Self {
        Self { labels: vec![predicted.clone()], predicted, confidence, posterior: vec![confidence] }
    }
}

/// Fingerprints of every fleet member, in fleet order.
pub fn fleet_features(fleet: &[FleetMember], query_aux: &QueryAux, adv: Option<&AdvMode>, seed: u64) -> Vec<Vec<f64>> {
    fleet.par_iter().map(|m| propinf_features(&m.model, query_aux, adv, seed)).collect()
}

fn check_inputs(fleet: &[FleetMember], query_aux: &QueryAux) -> Result<()> {
    if fleet.is_empty() {
        return Err(Error::MissingFleet("no shadow models".into()));
    }
    if query_aux.values().all(Vec::is_empty) {
        return Err(Error::MissingAuxiliary("query sets are empty".into()));
    }
    Ok(())
}

/// Train the meta-classifier on `fleet` and infer the proportion `target`
/// was trained on.
pub fn propinf_attack(
    target: &TrainedModel,
    fleet: &[FleetMember],
    query_aux: &QueryAux,
    adv: Option<&AdvMode>,
    config: &PropInfConfig,
) -> Result<(PropInfOutput, MetaClassifier)> {
    check_inputs(fleet, query_aux)?;
    let labels: Vec<PropertyProportion> = fleet.iter().map(|m| m.proportion.clone()).collect();
    let meta = MetaClassifier::fit(&fleet_features(fleet, query_aux, adv, config.seed), &labels, config)?;
    let out = meta.predict(&propinf_features(target, query_aux, adv, config.seed))?;
    Ok((out, meta))
}

/// Accuracy of the meta-classifier on a held-out fleet.
pub fn propinf_fleet_eval(
    train: &[FleetMember],
    held_out: &[FleetMember],
    query_aux: &QueryAux,
    adv: Option<&AdvMode>,
    config: &PropInfConfig,
) -> Result<AttackResult> {
    check_inputs(train, query_aux)?;
    let labels: Vec<PropertyProportion> = train.iter().map(|m| m.proportion.clone()).collect();
    let meta = MetaClassifier::fit(&fleet_features(train, query_aux, adv, config.seed), &labels, config)?;
    let probs = meta.probabilities(&fleet_features(held_out, query_aux, adv, config.seed))?;
    let predictions = crate::models::argmax_rows(&probs);
    let truth = held_out
        .iter()
        .map(|m| meta.labels.binary_search(&m.proportion).map_err(|_| Error::InvalidSpec(format!("held-out label {} unseen in training", m.proportion.label()))))
        .collect::<Result<Vec<_>>>()?;
    AttackResult::multiclass("propinf", &probs, predictions, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, partition_dataset, PartitionFractions, PartitionSpec, SyntheticSpec};
    use crate::models::{train_shadow_fleet, Architecture, ModelConfig};

    #[test]
    fn separable_fingerprints_are_classified() {
        let a = PropertyProportion::new(vec![0.2, 0.8]).unwrap();
        let b = PropertyProportion::uniform(2);
        let feats: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64 * 3.0 + 0.01 * i as f64, 1.0]).collect();
        let labels: Vec<_> = (0..20).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let m = MetaClassifier::fit(&feats, &labels, &PropInfConfig::default()).unwrap();
        for (f, l) in feats.iter().zip(&labels) {
            let o = m.predict(f).unwrap();
            assert_eq!(&o.predicted, l);
            assert!(o.confidence > 0.5 && (o.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(MetaClassifier::fit(&feats, &vec![a; 20], &PropInfConfig::default()), Err(Error::MissingFleet(_))));
    }

    #[test]
    fn constant_columns_do_not_change_the_classifier() {
        let a = PropertyProportion::new(vec![0.2, 0.8]).unwrap();
        let b = PropertyProportion::uniform(2);
        let feats: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64 + 0.1 * (i % 5) as f64, (i % 3) as f64]).collect();
        let widened: Vec<Vec<f64>> = feats.iter().map(|f| [f.as_slice(), &[0.0, 0.0]].concat()).collect();
        let labels: Vec<_> = (0..20).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let cfg = PropInfConfig::default();
        let plain = MetaClassifier::fit(&feats, &labels, &cfg).unwrap();
        let wide = MetaClassifier::fit(&widened, &labels, &cfg).unwrap();
        assert_eq!(wide.columns, vec![0, 1]);
        assert_eq!(plain.probabilities(&feats).unwrap(), wide.probabilities(&widened).unwrap());
        assert!(matches!(wide.probabilities(&feats), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn fingerprint_length_and_resubstitution() {
        let p28 = PropertyProportion::new(vec![0.2, 0.8]).unwrap();
        let p55 = PropertyProportion::uniform(2);
        let (meta, s) = generate(&SyntheticSpec { n_samples: 600, ..SyntheticSpec::default() }, 3).unwrap();
        let mut spec = PartitionSpec::balanced(2);
        spec.fractions = PartitionFractions { target_train: 0.2, target_test: 0.2, shadow_train: 0.3, shadow_test: 0.2 };
        spec.query_proportions = vec![p28.clone(), p55.clone()];
        spec.query_set_size = 10;
        let b = partition_dataset(&s, meta, &spec, 1).unwrap();
        let mut c = ModelConfig::new(Architecture::Mlp, 0);
        c.max_epochs = 2;
        let fleet = train_shadow_fleet(&c, meta, &b.shadow_train, &b.shadow_test, &[p28, p55], 3, 60, 4).unwrap();
        let f = propinf_features(&fleet[0].model, &b.query_aux, None, 0);
        assert_eq!(f.len(), 20 * meta.num_classes);
        let widened = propinf_features(&fleet[0].model, &b.query_aux, Some(&AdvMode::Pgd(Default::default())), 0);
        assert_eq!(widened.len(), f.len() + 20);
        let (out, _) = propinf_attack(&fleet[0].model, &fleet, &b.query_aux, None, &PropInfConfig::default()).unwrap();
        assert_eq!(out.predicted, fleet[0].proportion);
        let r = propinf_fleet_eval(&fleet, &fleet, &b.query_aux, None, &PropInfConfig::default()).unwrap();
        assert_eq!(r.accuracy(), 1.0);
    }
}
