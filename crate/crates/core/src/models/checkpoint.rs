//! Checkpoints: `manifest.json` (config, meta, log) plus `weights.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, DpReport, EpochRecord, FleetMember, ModelConfig, StopReason, TrainedModel};
use crate::data::PropertyProportion;
use crate::error::{Error, Result};
use crate::seed::content_hash;
use crate::tensor_io::{read_weights, write_weights};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    schema: u32,
    config: ModelConfig,
    meta: DatasetMeta,
    training_log: Vec<EpochRecord>,
    stop_reason: StopReason,
    final_train_acc: f64,
    final_test_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dp_report: Option<DpReport>,
    weights_sha256: String,
}

/// Writes the checkpoint and returns the hash of its weight blob.
pub fn save_checkpoint(model: &TrainedModel, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir)?;
    let tensors: Vec<_> = model.network.layers.iter().flat_map(|l| l.tensors()).collect();
    let weights = dir.join("weights.bin");
    write_weights(&weights, &tensors)?;
    let hash = content_hash(&fs::read(&weights)?);
    let manifest = CheckpointManifest {
        schema: CHECKPOINT_SCHEMA,
        config: model.config.clone(),
        meta: model.meta,
        training_log: model.training_log.clone(),
        stop_reason: model.stop_reason,
        final_train_acc: model.final_train_acc,
        final_test_acc: model.final_test_acc,
        dp_report: model.dp_report.clone(),
        weights_sha256: hash.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(hash)
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.schema != CHECKPOINT_SCHEMA {
        return Err(Error::SchemaMismatch(format!("checkpoint schema {}", manifest.schema)));
    }
    let weights = dir.join("weights.bin");
    if content_hash(&fs::read(&weights)?) != manifest.weights_sha256 {
        return Err(Error::corrupt(&weights, "checksum mismatch"));
    }
    let tensors = read_weights(&weights)?;
    let mut network = manifest.config.architecture.build(&manifest.meta, manifest.config.seed);
    let expected: Vec<_> = network.layers.iter().flat_map(|l| l.tensors()).collect();
    if expected.len() != tensors.len() || expected.iter().zip(&tensors).any(|(e, t)| e.0 != t.0) {
        return Err(Error::corrupt(&weights, "tensor shapes do not match the architecture"));
    }
    let flat: Vec<f64> = tensors.into_iter().flat_map(|(_, v)| v).collect();
    network.set_params(&flat);
    Ok(TrainedModel {
        network,
        config: manifest.config,
        meta: manifest.meta,
        training_log: manifest.training_log,
        stop_reason: manifest.stop_reason,
        final_train_acc: manifest.final_train_acc,
        final_test_acc: manifest.final_test_acc,
        dp_report: manifest.dp_report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetEntry {
    /// Relative to the fleet directory.
    pub checkpoint: PathBuf,
    pub proportion: PropertyProportion,
    pub seed: u64,
    pub weights_sha256: String,
}

/// One checkpoint per member under `dir/member_XXX` and an index `fleet.json`.
pub fn save_fleet(fleet: &[FleetMember], dir: &Path) -> Result<Vec<FleetEntry>> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(fleet.len());
    for (i, m) in fleet.iter().enumerate() {
        let rel = PathBuf::from(format!("member_{i:03}"));
        let hash = save_checkpoint(&m.model, &dir.join(&rel))?;
        entries.push(FleetEntry { checkpoint: rel, proportion: m.proportion.clone(), seed: m.seed, weights_sha256: hash });
    }
    fs::write(dir.join("fleet.json"), serde_json::to_vec_pretty(&entries)?)?;
    Ok(entries)
}

pub fn load_fleet(dir: &Path) -> Result<Vec<FleetMember>> {
    let entries: Vec<FleetEntry> = serde_json::from_slice(&fs::read(dir.join("fleet.json"))?)?;
    entries
        .into_iter()
        .map(|e| {
            Ok(FleetMember { model: load_checkpoint(&dir.join(&e.checkpoint))?, proportion: e.proportion, seed: e.seed })
        })
        .collect()
}
