//! Attribute inference from the target's penultimate-layer embeddings.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::branch::Standardizer;
use super::AttackResult;
use crate::data::{feature_matrix, Sample};
use crate::error::{Error, Result};
use crate::models::{argmax_rows, WhiteBox};
use crate::nn::{cross_entropy, gather_rows, shuffled_indices, softmax_rows, Adam, Network};
use crate::seed::{derive_seed, rng_for};

/// Training settings of a standardized dense softmax classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Hidden widths; empty gives multinomial logistic regression.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseClassifier {
    pub net: Network,
    pub scaler: Standardizer,
}

impl DenseClassifier {
    pub fn fit(x: &Array2<f64>, labels: &[usize], num_classes: usize, config: &ClassifierConfig) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::ShapeMismatch("classifier inputs and labels differ in length".into()));
        }
        let mut seen = vec![false; num_classes];
        for &l in labels {
            if l >= num_classes {
                return Err(Error::DegenerateLabels(format!("label {l} outside 0..{num_classes}")));
            }
            seen[l] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::DegenerateLabels("training labels hold a single class".into()));
        }
        let scaler = Standardizer::fit(x);
        let xs = scaler.apply(x);
        let mut dims = vec![x.ncols()];
        dims.extend(&config.hidden);
        dims.push(num_classes);
        let mut rng = rng_for(derive_seed(config.seed, "classifier_init", 0));
        let mut net = Network::mlp(&dims, &mut rng);
        let mut adam = Adam::new(config.learning_rate, net.param_count());
        let n = labels.len();
        let batch = if config.batch_size == 0 { n } else { config.batch_size };
        for epoch in 1..=config.epochs {
            let order = shuffled_indices(n, &mut rng);
            for idx in order.chunks(batch) {
                let xb = gather_rows(&xs, idx);
                let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let (logits, trace) = net.forward_trace(&xb);
                let (loss, d) = cross_entropy(&logits, &yb);
                if !loss.is_finite() {
                    return Err(Error::DivergedTraining { epoch });
                }
                let (mut grad, _) = net.backward(&trace, &(d / idx.len() as f64));
                if config.l2 > 0.0 {
                    for (g, p) in grad.iter_mut().zip(net.params()) {
                        *g += config.l2 * p;
                    }
                }
                adam.step(&mut net, &grad);
            }
        }
        Ok(Self { net, scaler })
    }

    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        softmax_rows(&self.net.forward(&self.scaler.apply(x)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttrInfConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AttrInfConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 100, learning_rate: 1e-2, batch_size: 64, seed: 0 }
    }
}

impl AttrInfConfig {
    fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            hidden: vec![self.hidden],
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            l2: 0.0,
            seed: self.seed,
        }
    }
}

/// Train a two-layer classifier from embeddings of `aux` to their attributes
/// and score it on `eval`. Metrics are accuracy and macro-F1 (plus AUC for
/// binary attributes).
pub fn attrinf_attack(
    target: &impl WhiteBox,
    num_attributes: usize,
    aux: &[Sample],
    eval: &[Sample],
    config: &AttrInfConfig,
) -> Result<AttackResult> {
    let emb_aux = target.embeddings(&feature_matrix(aux));
    let labels: Vec<usize> = aux.iter().map(|s| s.attribute).collect();
    let clf = DenseClassifier::fit(&emb_aux, &labels, num_attributes, &config.classifier())?;
    let probs = clf.probabilities(&target.embeddings(&feature_matrix(eval)));
    let predictions = argmax_rows(&probs);
    let truth = eval.iter().map(|s| s.attribute).collect();
    AttackResult::multiclass("attrinf", &probs, predictions, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BlackBox;

    /// Identity "model" whose embedding is the input itself.
    struct Raw;
    impl BlackBox for Raw {
        fn num_classes(&self) -> usize {
            2
        }
        fn posteriors(&self, x: &Array2<f64>) -> Array2<f64> {
            Array2::from_elem((x.nrows(), 2), 0.5)
        }
    }
    impl WhiteBox for Raw {
        fn embeddings(&self, x: &Array2<f64>) -> Array2<f64> {
            x.clone()
        }
        fn input_gradient(&self, x: &Array2<f64>, _: &[usize]) -> Array2<f64> {
            Array2::zeros(x.raw_dim())
        }
        fn views(&self, _: &[Sample]) -> Vec<crate::models::SampleView> {
            Vec::new()
        }
    }

    fn planted(n: usize, seed: u64) -> Vec<Sample> {
        use rand::Rng as _;
        let mut rng = rng_for(seed);
        (0..n)
            .map(|i| {
                let a = i % 2;
                let mut f: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                f[0] = 0.25 + 0.5 * a as f64 + 0.1 * (rng.random::<f64>() - 0.5);
                Sample { id: i as u64, features: f, task_label: 0, attribute: a, property: 0 }
            })
            .collect()
    }

    #[test]
    fn planted_attribute_is_recovered() {
        let aux = planted(200, 1);
        let eval = planted(100, 2);
        let cfg = AttrInfConfig { epochs: 20, ..AttrInfConfig::default() };
        let r = attrinf_attack(&Raw, 2, &aux, &eval, &cfg).unwrap();
        assert!(r.accuracy() >= 0.95, "{}", r.accuracy());
        assert!(r.metrics.contains_key("f1"));
        let same = attrinf_attack(&Raw, 2, &aux, &aux, &cfg).unwrap();
        assert!(same.accuracy() >= 0.95);
    }

    #[test]
    fn single_attribute_is_degenerate() {
        let aux: Vec<Sample> = planted(20, 1).into_iter().filter(|s| s.attribute == 0).collect();
        assert!(matches!(attrinf_attack(&Raw, 2, &aux, &aux, &AttrInfConfig::default()), Err(Error::DegenerateLabels(_))));
    }
}
