//! Desk-scale image-like generator with planted task, attribute and property
//! patterns.
//!
//! Every sample is a single-channel `side x side` grid:
//!
//! ```text
//! x = clip(0.5 + class_signal     * (T[task] - 0.5)
//!              + property_signal  * (V[task][property] - 0.5)
//!              + attribute_signal * (A[attribute] - 0.5)
//!              + noise * N(0, 1), 0, 1)
//! ```
//!
//! `T`, `V` and `A` are fixed random templates drawn from `template_seed`. The
//! property pattern is class specific, so a classifier trained on a skewed
//! property mix fits the majority variant of every class better.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetMeta, Sample};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub side: usize,
    pub num_classes: usize,
    pub num_attributes: usize,
    pub num_properties: usize,
    pub class_signal: f64,
    pub property_signal: f64,
    pub attribute_signal: f64,
    pub noise: f64,
    /// Probability that `attribute == property` (requires equal cardinalities);
    /// otherwise the attribute is drawn independently.
    pub attribute_property_agreement: f64,
    /// Probability that a task label is replaced by a different class drawn
    /// uniformly. Features keep following the original class.
    #[serde(default)]
    pub label_noise: f64,
    pub template_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            side: 8,
            num_classes: 4,
            num_attributes: 2,
            num_properties: 2,
            class_signal: 0.5,
            property_signal: 0.35,
            attribute_signal: 0.2,
            noise: 0.25,
            attribute_property_agreement: 0.0,
            label_noise: 0.0,
            template_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            channels: 1,
            height: self.side,
            width: self.side,
            num_classes: self.num_classes,
            num_attributes: self.num_attributes,
            num_properties: self.num_properties,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.num_classes < 2 || self.num_attributes < 1 || self.num_properties < 1 {
            return Err(Error::InvalidSpec("synthetic spec needs side > 0, >= 2 classes".into()));
        }
        if !(0.0..=1.0).contains(&self.attribute_property_agreement) {
            return Err(Error::InvalidSpec("attribute_property_agreement outside [0,1]".into()));
        }
        if self.attribute_property_agreement > 0.0 && self.num_attributes != self.num_properties {
            return Err(Error::InvalidSpec(
                "attribute/property agreement needs equal attribute and property cardinalities".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::InvalidSpec("label_noise outside [0,1]".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::InvalidSpec("noise must be nonnegative".into()));
        }
        Ok(())
    }
}

fn template(dim: usize, rng: &mut crate::seed::Rng) -> Vec<f64> {
    (0..dim).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

/// Generate `spec.n_samples` samples; ids are `0..n`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<(DatasetMeta, Vec<Sample>)> {
    spec.validate()?;
    let dim = spec.side * spec.side;
    let mut trng = rng_for(derive_seed(spec.template_seed, "templates", 0));
    let class_t: Vec<Vec<f64>> = (0..spec.num_classes).map(|_| template(dim, &mut trng)).collect();
    let prop_t: Vec<Vec<Vec<f64>>> = (0..spec.num_classes)
        .map(|_| (0..spec.num_properties).map(|_| template(dim, &mut trng)).collect())
        .collect();
    let attr_t: Vec<Vec<f64>> = (0..spec.num_attributes).map(|_| template(dim, &mut trng)).collect();

    let mut rng = rng_for(derive_seed(seed, "samples", 0));
    let mut label_rng = rng_for(derive_seed(seed, "label_noise", 0));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let samples = (0..spec.n_samples)
        .map(|i| {
            let task = rng.random_range(0..spec.num_classes);
            let property = rng.random_range(0..spec.num_properties);
            let attribute = if rng.random_bool(spec.attribute_property_agreement) {
                property
            } else {
                rng.random_range(0..spec.num_attributes)
            };
            let features = (0..dim)
                .map(|k| {
                    let v = 0.5
                        + spec.class_signal * (class_t[task][k] - 0.5)
                        + spec.property_signal * (prop_t[task][property][k] - 0.5)
                        + spec.attribute_signal * (attr_t[attribute][k] - 0.5)
                        + spec.noise * normal.sample(&mut rng);
                    v.clamp(0.0, 1.0)
                })
                .collect();
            let mut task_label = task;
            if spec.label_noise > 0.0 && label_rng.random_bool(spec.label_noise) {
                task_label = (task + label_rng.random_range(1..spec.num_classes)) % spec.num_classes;
            }
            Sample { id: i as u64, features, task_label, attribute, property }
        })
        .collect();
    Ok((spec.meta(), samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_samples_satisfy_meta() {
        let spec = SyntheticSpec { n_samples: 200, ..SyntheticSpec::default() };
        let (meta, samples) = generate(&spec, 1).unwrap();
        assert_eq!(samples.len(), 200);
        for s in &samples {
            meta.validate(s).unwrap();
        }
        let (_, again) = generate(&spec, 1).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn full_agreement_ties_attribute_to_property() {
        let spec = SyntheticSpec { n_samples: 100, attribute_property_agreement: 1.0, ..SyntheticSpec::default() };
        let (_, samples) = generate(&spec, 2).unwrap();
        assert!(samples.iter().all(|s| s.attribute == s.property));
    }

    #[test]
    fn label_noise_flips_labels_without_touching_features() {
        let clean = SyntheticSpec { n_samples: 400, ..SyntheticSpec::default() };
        let noisy = SyntheticSpec { label_noise: 0.3, ..clean.clone() };
        let (_, a) = generate(&clean, 4).unwrap();
        let (_, b) = generate(&noisy, 4).unwrap();
        let flipped = a.iter().zip(&b).filter(|(x, y)| x.task_label != y.task_label).count();
        assert!((80..160).contains(&flipped), "{flipped}");
        assert!(a.iter().zip(&b).all(|(x, y)| x.features == y.features));
    }

    #[test]
    fn rejects_bad_agreement() {
        let spec = SyntheticSpec { num_attributes: 3, attribute_property_agreement: 0.5, ..SyntheticSpec::default() };
        assert!(generate(&spec, 0).is_err());
    }
}
