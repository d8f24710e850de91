//! Inference-time attacks on classifiers (adversarial examples, membership,
//! attribute and property inference) and compositions in which one attack
//! amplifies another.
//!
//! Module map:
//! - [`data`]: samples, proportion-controlled partitions, synthetic generator
//! - [`models`]: target/shadow training, DP-SGD, black- and white-box views
//! - [`attacks`]: the four standalone attacks and LiRA
//! - [`compose`]: compositions at the preparation, execution and evaluation levels
//! - [`analysis`]: metrics, KS diagnostics, comparison tables

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod analysis;
pub mod attacks;
pub mod compose;
pub mod data;
pub mod error;
pub mod models;
pub mod nn;
pub mod seed;
pub mod tensor_io;

pub use analysis::{compute_metrics, ks_shift, MetricReport};
pub use attacks::{AdvResult, AttackFeatureRecord, AttackResult, MemInfSetting};
pub use compose::{CompositionPlan, CompositionRun};
pub use data::{DatasetBundle, DatasetMeta, PartitionSpec, PropertyProportion, Sample};
pub use error::{Error, Result};
pub use models::{Architecture, DpConfig, ModelConfig, TrainedModel};
