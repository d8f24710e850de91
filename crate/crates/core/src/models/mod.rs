//! Target and shadow classifiers: architectures, training, DP-SGD, views and
//! checkpoints.

mod accountant;
mod checkpoint;
mod fleet;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{feature_matrix, DatasetMeta, Sample};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax_rows, Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2, Network, Residual};
use crate::seed::rng_for;

pub use accountant::{compute_epsilon, noise_multiplier_for, rdp_subsampled_gaussian};
pub use checkpoint::{load_checkpoint, load_fleet, save_checkpoint, save_fleet, FleetEntry};
pub use fleet::{train_shadow_fleet, FleetMember};
pub use train::{clip_in_place, train_dp_model, train_model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Two conv blocks (conv, relu, pool) and two dense layers.
    SmallCnn,
    /// Three dense layers.
    Mlp,
    /// Conv stem, three residual blocks, global average pooling, dense head.
    ResnetSmall,
}

impl Architecture {
    pub fn build(self, meta: &DatasetMeta, seed: u64) -> Network {
        let mut rng = rng_for(seed);
        let (c, h, w, k) = (meta.channels, meta.height, meta.width, meta.num_classes);
        match self {
            Architecture::SmallCnn => {
                let (h2, w2) = (h / 2, w / 2);
                let (h4, w4) = (h2 / 2, w2 / 2);
                let flat = 16 * h4 * w4;
                Network::new(
                    c * h * w,
                    vec![
                        Layer::Conv(Conv2d::new(c, 8, h, w, &mut rng)),
                        Layer::Relu,
                        Layer::MaxPool(MaxPool2 { channels: 8, height: h, width: w }),
                        Layer::Conv(Conv2d::new(8, 16, h2, w2, &mut rng)),
                        Layer::Relu,
                        Layer::MaxPool(MaxPool2 { channels: 16, height: h2, width: w2 }),
                        Layer::Dense(Dense::new(flat, 32, &mut rng)),
                        Layer::Relu,
                        Layer::Dense(Dense::new(32, k, &mut rng)),
                    ],
                )
            }
            Architecture::Mlp => Network::mlp(&[c * h * w, 64, 32, k], &mut rng),
            Architecture::ResnetSmall => {
                let (h2, w2) = (h / 2, w / 2);
                let mut layers = vec![
                    Layer::Conv(Conv2d::new(c, 8, h, w, &mut rng)),
                    Layer::Relu,
                    Layer::MaxPool(MaxPool2 { channels: 8, height: h, width: w }),
                ];
                for _ in 0..3 {
                    layers.push(Layer::Residual(Residual {
                        conv_a: Conv2d::new(8, 8, h2, w2, &mut rng),
                        conv_b: Conv2d::new(8, 8, h2, w2, &mut rng),
                    }));
                }
                layers.push(Layer::GlobalAvgPool(GlobalAvgPool { channels: 8, positions: h2 * w2 }));
                layers.push(Layer::Dense(Dense::new(8, 16, &mut rng)));
                layers.push(Layer::Relu);
                layers.push(Layer::Dense(Dense::new(16, k, &mut rng)));
                Network::new(c * h * w, layers)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub clip_norm: f64,
    /// Fixes the noise multiplier and bypasses the accountant (test mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_multiplier: Option<f64>,
}

fn default_delta() -> f64 {
    1e-5
}

impl DpConfig {
    pub fn new(epsilon: f64, clip_norm: f64) -> Self {
        Self { epsilon, delta: default_delta(), clip_norm, noise_multiplier: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "dp config needs epsilon > 0, delta in (0,1), clip_norm > 0: {self:?}"
            )));
        }
        if self.noise_multiplier.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::InvalidSpec("noise_multiplier must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_threshold")]
    pub overfit_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-2
}
fn default_threshold() -> f64 {
    0.25
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Architecture::SmallCnn, 0)
    }
}

impl ModelConfig {
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        Self {
            architecture,
            max_epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: Optimizer::Adam,
            overfit_threshold: default_threshold(),
            dp: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidSpec("max_epochs and batch_size must be >= 1".into()));
        }
        if !(self.overfit_threshold > 0.0 && self.overfit_threshold <= 1.0) && self.overfit_threshold != 0.0 {
            return Err(Error::InvalidSpec(format!("overfit_threshold {} outside (0,1]", self.overfit_threshold)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidSpec("learning_rate must be positive".into()));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    OverfitThreshold,
    MaxEpochs,
}

/// Privacy bookkeeping of a DP-SGD run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpReport {
    pub noise_multiplier: f64,
    pub steps: usize,
    /// Largest clipped per-sample gradient norm of every update.
    pub max_clipped_norms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub config: ModelConfig,
    pub meta: DatasetMeta,
    pub training_log: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub dp_report: Option<DpReport>,
}

impl TrainedModel {
    /// An untrained model at its initialization, with an empty log.
    pub fn untrained(config: ModelConfig, meta: DatasetMeta) -> Self {
        Self {
            network: config.architecture.build(&meta, config.seed),
            config,
            meta,
            training_log: Vec::new(),
            stop_reason: StopReason::MaxEpochs,
            final_train_acc: 0.0,
            final_test_acc: 0.0,
            dp_report: None,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn dp(&self) -> Option<&DpConfig> {
        self.config.dp.as_ref()
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn fingerprint(&self) -> String {
        let bytes: Vec<u8> = self.network.params().iter().flat_map(|p| p.to_le_bytes()).collect();
        crate::seed::content_hash(&bytes)
    }

    pub fn overfitting(&self) -> f64 {
        self.final_train_acc - self.final_test_acc
    }
}

/// Per-sample outputs of the black- and white-box views.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleView {
    pub posteriors: Vec<f64>,
    pub predicted_label: usize,
    pub loss: f64,
    pub embedding: Vec<f64>,
    /// Gradient of the loss w.r.t. the final dense layer: weights `(emb, K)`
    /// row-major, then bias.
    pub last_layer_gradient: Vec<f64>,
}

/// Query access: posteriors only.
pub trait BlackBox: Sync {
    fn num_classes(&self) -> usize;

    fn posteriors(&self, x: &Array2<f64>) -> Array2<f64>;

    fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        argmax_rows(&self.posteriors(x))
    }
}

/// Full access: embeddings and gradients.
pub trait WhiteBox: BlackBox {
    /// Penultimate-layer embeddings.
    fn embeddings(&self, x: &Array2<f64>) -> Array2<f64>;

    /// Gradient of the summed cross-entropy w.r.t. the inputs.
    fn input_gradient(&self, x: &Array2<f64>, labels: &[usize]) -> Array2<f64>;

    fn views(&self, samples: &[Sample]) -> Vec<SampleView>;
}

impl BlackBox for Network {
    fn num_classes(&self) -> usize {
        self.output_dim()
    }

    fn posteriors(&self, x: &Array2<f64>) -> Array2<f64> {
        softmax_rows(&self.forward(x))
    }
}

impl WhiteBox for Network {
    fn embeddings(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_with_embedding(x).1
    }

    fn input_gradient(&self, x: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
        let (logits, trace) = self.forward_trace(x);
        let (_, dlogits) = cross_entropy(&logits, labels);
        self.backward(&trace, &dlogits).1
    }

    fn views(&self, samples: &[Sample]) -> Vec<SampleView> {
        let x = feature_matrix(samples);
        let (logits, emb) = self.forward_with_embedding(&x);
        let probs = softmax_rows(&logits);
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = probs.row(i).to_vec();
                let e = emb.row(i).to_vec();
                let mut dlogit = p.clone();
                dlogit[s.task_label] -= 1.0;
                let mut grad = Vec::with_capacity(e.len() * p.len() + p.len());
                for ev in &e {
                    grad.extend(dlogit.iter().map(|d| ev * d));
                }
                grad.extend(&dlogit);
                SampleView {
                    predicted_label: argmax(&p),
                    loss: -p[s.task_label].max(f64::MIN_POSITIVE).ln(),
                    posteriors: p,
                    embedding: e,
                    last_layer_gradient: grad,
                }
            })
            .collect()
    }
}

impl BlackBox for TrainedModel {
    fn num_classes(&self) -> usize {
        self.network.num_classes()
    }

    fn posteriors(&self, x: &Array2<f64>) -> Array2<f64> {
        self.network.posteriors(x)
    }
}

impl WhiteBox for TrainedModel {
    fn embeddings(&self, x: &Array2<f64>) -> Array2<f64> {
        self.network.embeddings(x)
    }

    fn input_gradient(&self, x: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
        self.network.input_gradient(x, labels)
    }

    fn views(&self, samples: &[Sample]) -> Vec<SampleView> {
        self.network.views(samples)
    }
}

/// Black- and white-box outputs for every sample.
pub fn model_views(model: &impl WhiteBox, samples: &[Sample]) -> Vec<SampleView> {
    model.views(samples)
}

/// Index of the largest entry; the lowest index wins exact ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows().into_iter().map(|r| argmax(r.as_slice().expect("row-major"))).collect()
}

/// Fraction of samples whose predicted label equals the task label.
pub fn accuracy(model: &impl BlackBox, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let pred = model.predict(&feature_matrix(samples));
    pred.iter().zip(samples).filter(|(p, s)| **p == s.task_label).count() as f64 / samples.len() as f64
}
