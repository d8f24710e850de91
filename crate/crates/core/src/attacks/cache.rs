//! On-disk cache of membership feature records: `<key>.json` manifest plus a
//! `<key>.bin` matrix, keyed by (model fingerprint, setting, attack params).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::meminf::{feature_schema, Access, AttackFeatureRecord};
use crate::error::{Error, Result};
use crate::seed::{content_hash, json_hash};
use crate::tensor_io::{read_matrix, write_matrix};

pub const CACHE_SCHEMA: u32 = 1;

/// Columns preceding the branch features.
const FIXED: [&str; 5] = ["sample_id", "property", "member", "correct", "adv_flipped"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub model: String,
    pub setting: String,
    /// Canonical JSON of the attack parameters.
    pub params: String,
}

impl CacheKey {
    pub fn new(model: &str, setting: &str, params: &impl Serialize) -> Result<Self> {
        Ok(Self { model: model.into(), setting: setting.into(), params: serde_json::to_string(params)? })
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheManifest {
    schema: u32,
    key: CacheKey,
    access: Access,
    columns: Vec<(String, usize)>,
    rows: usize,
    matrix_sha256: String,
}

fn paths(dir: &Path, key: &CacheKey) -> (PathBuf, PathBuf) {
    let h = key.hash();
    (dir.join(format!("{h}.json")), dir.join(format!("{h}.bin")))
}

fn opt(v: Option<u8>) -> f64 {
    v.map_or(-1.0, f64::from)
}

pub fn save_features(dir: &Path, key: &CacheKey, records: &[AttackFeatureRecord], access: Access) -> Result<()> {
    fs::create_dir_all(dir)?;
    let branches: Vec<(String, usize)> = feature_schema(records, access).into_iter().filter(|(n, _)| n != "correct").collect();
    let width = FIXED.len() + branches.iter().map(|b| b.1).sum::<usize>();
    let mut m = Array2::zeros((records.len(), width));
    for (r, mut row) in records.iter().zip(m.rows_mut()) {
        let mut v = vec![
            r.sample_id as f64,
            r.property as f64,
            opt(r.member),
            f64::from(r.correct),
            opt(r.adv_flipped.map(u8::from)),
        ];
        for (name, _) in &branches {
            match name.as_str() {
                "ranked_posteriors" => v.extend(&r.ranked_posteriors),
                "loss" => v.push(r.loss.unwrap_or_default()),
                "last_layer_gradient" => v.extend(r.last_layer_gradient.iter().flatten()),
                "onehot_label" => v.extend(r.onehot_label.iter().flatten()),
                "adv_l2" => v.push(r.adv_l2.unwrap_or_default()),
                _ => unreachable!(),
            }
        }
        if v.len() != width {
            return Err(Error::ShapeMismatch(format!("record {} has {} columns, expected {width}", r.sample_id, v.len())));
        }
        row.assign(&ndarray::Array1::from(v));
    }
    let (manifest_path, matrix_path) = paths(dir, key);
    write_matrix(&matrix_path, &m)?;
    let manifest = CacheManifest {
        schema: CACHE_SCHEMA,
        key: key.clone(),
        access,
        columns: FIXED.iter().map(|c| (c.to_string(), 1)).chain(branches).collect(),
        rows: records.len(),
        matrix_sha256: content_hash(&fs::read(&matrix_path)?),
    };
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// `Ok(None)` on a cache miss; corrupt entries are errors.
pub fn load_features(dir: &Path, key: &CacheKey) -> Result<Option<Vec<AttackFeatureRecord>>> {
    let (manifest_path, matrix_path) = paths(dir, key);
    if !manifest_path.exists() {
        return Ok(None);
    }
    let manifest: CacheManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.schema != CACHE_SCHEMA {
        return Err(Error::SchemaMismatch(format!("feature cache schema {}", manifest.schema)));
    }
    if &manifest.key != key {
        return Err(Error::corrupt(&manifest_path, "key does not match its hash"));
    }
    if content_hash(&fs::read(&matrix_path)?) != manifest.matrix_sha256 {
        return Err(Error::corrupt(&matrix_path, "checksum mismatch"));
    }
    let m = read_matrix(&matrix_path)?;
    let width: usize = manifest.columns.iter().map(|c| c.1).sum();
    if m.ncols() != width || m.nrows() != manifest.rows {
        return Err(Error::corrupt(&matrix_path, "matrix shape does not match the manifest"));
    }
    let flag = |v: f64| (v >= 0.0).then_some(v as u8);
    let records = m
        .rows()
        .into_iter()
        .map(|row| {
            let row = row.to_vec();
            let mut rec = AttackFeatureRecord {
                sample_id: row[0] as u64,
                property: row[1] as usize,
                member: flag(row[2]),
                correct: row[3] as u8,
                adv_flipped: flag(row[4]).map(|f| f == 1),
                ranked_posteriors: Vec::new(),
                loss: None,
                last_layer_gradient: None,
                onehot_label: None,
                adv_l2: None,
            };
            let mut off = FIXED.len();
            for (name, w) in &manifest.columns[FIXED.len()..] {
                let part = row[off..off + w].to_vec();
                off += w;
                match name.as_str() {
                    "ranked_posteriors" => rec.ranked_posteriors = part,
                    "loss" => rec.loss = Some(part[0]),
                    "last_layer_gradient" => rec.last_layer_gradient = Some(part),
                    "onehot_label" => rec.onehot_label = Some(part),
                    "adv_l2" => rec.adv_l2 = Some(part[0]),
                    _ => {}
                }
            }
            rec
        })
        .collect();
    Ok(Some(records))
}
