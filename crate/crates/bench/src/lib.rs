//! Fixtures shared by the benchmarks.

use infercomp_core::data::{feature_matrix, generate, Sample, SyntheticSpec};
use infercomp_core::models::{train_model, Architecture, ModelConfig};
use infercomp_core::TrainedModel;
use ndarray::Array2;

/// A small trained target and `n` held-out samples.
pub fn fixture(architecture: Architecture, n: usize) -> (TrainedModel, Vec<Sample>, Array2<f64>) {
    let spec = SyntheticSpec { n_samples: 400 + n, ..SyntheticSpec::default() };
    let (meta, samples) = generate(&spec, 1).expect("valid spec");
    let (train, held_out) = samples.split_at(400);
    let mut config = ModelConfig::new(architecture, 1);
    config.max_epochs = 3;
    let model = train_model(&config, meta, &train[..300], &train[300..]).expect("trains");
    let x = feature_matrix(held_out);
    (model, held_out.to_vec(), x)
}

/// Scores with ties and their labels, deterministic.
pub fn scored(n: usize) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let truth = (0..n).map(|i| (i * 31) % 3 == 0).collect();
    (scores, truth)
}
