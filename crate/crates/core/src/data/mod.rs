//! Samples with three label axes and the four-way dataset partition.

mod loader;
mod partition;
mod store;
pub mod synthetic;

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loader::load_csv;
pub use partition::{
    build_query_aux, partition_dataset, sample_with_proportion, DatasetBundle, PartitionFractions,
    PartitionSpec,
};
pub use store::{load_bundle, save_bundle, BundleManifest};
pub use synthetic::{generate, SyntheticSpec};

/// One input with its task label and two secondary label axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Identity used for disjointness checks.
    pub id: u64,
    pub features: Vec<f64>,
    pub task_label: usize,
    /// Target of attribute inference.
    pub attribute: usize,
    /// Target of property inference.
    pub property: usize,
}

/// Shape and label cardinalities shared by every sample of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_attributes: usize,
    pub num_properties: usize,
}

impl DatasetMeta {
    pub fn feature_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn validate(&self, sample: &Sample) -> Result<()> {
        if sample.features.len() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "sample {} has {} features, expected {}",
                sample.id,
                sample.features.len(),
                self.feature_dim()
            )));
        }
        if let Some(v) = sample.features.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidSpec(format!("sample {} has feature {v} outside [0,1]", sample.id)));
        }
        if sample.task_label >= self.num_classes
            || sample.attribute >= self.num_attributes
            || sample.property >= self.num_properties
        {
            return Err(Error::InvalidSpec(format!("sample {} has a label out of range", sample.id)));
        }
        Ok(())
    }
}

/// Distribution over the property values, used both as a sampling target and
/// as the label space of property inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PropertyProportion(Vec<f64>);

impl PropertyProportion {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSpec("empty property proportion".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidSpec(format!("negative or non-finite weight in {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("weights {weights:?} sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Normalizes nonnegative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidSpec(format!("cannot normalize {weights:?}")));
        }
        let mut w: Vec<f64> = weights.iter().map(|v| v / sum).collect();
        // absorb rounding so the invariant holds exactly enough
        let drift: f64 = 1.0 - w.iter().sum::<f64>();
        if let Some(max) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *max += drift;
        }
        Self::new(w)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, value: usize) -> f64 {
        self.0[value]
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.0.len() as f64;
        self.0.iter().all(|w| (w - u).abs() < 1e-12)
    }

    /// Per-value counts for a set of size `n` using largest-remainder rounding.
    /// Ties on the fractional part go to the lower property value.
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let exact: Vec<f64> = self
            .0
            .iter()
            .map(|w| ((n as f64 * w) * 1e9).round() / 1e9)
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &v in order.iter().take(n.saturating_sub(assigned)) {
            counts[v] += 1;
        }
        counts
    }

    /// Short label such as `0.2:0.8`.
    pub fn label(&self) -> String {
        self.0.iter().map(|w| format!("{w}")).collect::<Vec<_>>().join(":")
    }
}

impl TryFrom<Vec<f64>> for PropertyProportion {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PropertyProportion> for Vec<f64> {
    fn from(p: PropertyProportion) -> Self {
        p.0
    }
}

impl Eq for PropertyProportion {}

impl PartialOrd for PropertyProportion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PropertyProportion {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

/// Stack sample features into a `(n, feature_dim)` matrix.
pub fn feature_matrix(samples: &[Sample]) -> Array2<f64> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut m = Array2::zeros((samples.len(), dim));
    for (mut row, s) in m.rows_mut().into_iter().zip(samples) {
        row.assign(&ndarray::ArrayView1::from(&s.features[..]));
    }
    m
}

pub fn task_labels(samples: &[Sample]) -> Vec<usize> {
    samples.iter().map(|s| s.task_label).collect()
}

/// Realized property frequencies of a sample set.
pub fn property_counts(samples: &[Sample], num_properties: usize) -> Vec<usize> {
    let mut c = vec![0; num_properties];
    for s in samples {
        c[s.property] += 1;
    }
    c
}

pub fn ids(samples: &[Sample]) -> Vec<u64> {
    samples.iter().map(|s| s.id).collect()
}
