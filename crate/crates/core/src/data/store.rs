//! Bundle persistence: `manifest.json` plus one sample table per partition.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ids, DatasetBundle, DatasetMeta, PartitionSpec, PropertyProportion};
use crate::error::{Error, Result};
use crate::seed::content_hash;
use crate::tensor_io::{read_samples, write_samples};

pub const BUNDLE_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub file: String,
    pub sha256: String,
    pub ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub proportion: PropertyProportion,
    #[serde(flatten)]
    pub entry: PartitionEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub schema: u32,
    pub seed: u64,
    pub meta: DatasetMeta,
    pub spec: PartitionSpec,
    pub partitions: BTreeMap<String, PartitionEntry>,
    pub query_aux: Vec<QueryEntry>,
}

fn write_part(dir: &Path, name: &str, samples: &[super::Sample], dim: usize) -> Result<PartitionEntry> {
    let file = format!("{name}.bin");
    let path = dir.join(&file);
    write_samples(&path, samples, dim)?;
    Ok(PartitionEntry { sha256: content_hash(&fs::read(&path)?), file, ids: ids(samples) })
}

pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<BundleManifest> {
    fs::create_dir_all(dir)?;
    let dim = bundle.meta.feature_dim();
    let mut partitions = BTreeMap::new();
    for (name, part) in bundle.partitions() {
        partitions.insert(name.to_string(), write_part(dir, name, part, dim)?);
    }
    partitions.insert("partial_aux".into(), write_part(dir, "partial_aux", &bundle.partial_aux, dim)?);
    partitions.insert("reserve".into(), write_part(dir, "reserve", &bundle.reserve, dim)?);
    let query_aux = bundle
        .query_aux
        .iter()
        .enumerate()
        .map(|(i, (p, s))| Ok(QueryEntry { proportion: p.clone(), entry: write_part(dir, &format!("query_{i}"), s, dim)? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = BundleManifest {
        schema: BUNDLE_SCHEMA,
        seed: bundle.seed,
        meta: bundle.meta,
        spec: bundle.spec.clone(),
        partitions,
        query_aux,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read_part(dir: &Path, entry: &PartitionEntry) -> Result<Vec<super::Sample>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path)?;
    if content_hash(&bytes) != entry.sha256 {
        return Err(Error::corrupt(&path, "checksum mismatch"));
    }
    let samples = read_samples(&path)?;
    if ids(&samples) != entry.ids {
        return Err(Error::corrupt(&path, "sample ids differ from manifest"));
    }
    Ok(samples)
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join("manifest.json");
    let manifest: BundleManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.schema != BUNDLE_SCHEMA {
        return Err(Error::SchemaMismatch(format!("bundle schema {} != {BUNDLE_SCHEMA}", manifest.schema)));
    }
    let part = |name: &str| -> Result<Vec<super::Sample>> {
        let entry = manifest
            .partitions
            .get(name)
            .ok_or_else(|| Error::corrupt(&manifest_path, format!("missing partition {name}")))?;
        read_part(dir, entry)
    };
    let query_aux = manifest
        .query_aux
        .iter()
        .map(|q| Ok((q.proportion.clone(), read_part(dir, &q.entry)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let bundle = DatasetBundle {
        meta: manifest.meta,
        spec: manifest.spec.clone(),
        seed: manifest.seed,
        target_train: part("target_train")?,
        target_test: part("target_test")?,
        shadow_train: part("shadow_train")?,
        shadow_test: part("shadow_test")?,
        partial_aux: part("partial_aux")?,
        query_aux,
        reserve: part("reserve")?,
    };
    bundle.check_invariants()?;
    Ok(bundle)
}
