use serde::{Deserialize, Serialize};

use crate::compose::{CompositionRun, RUN_SCHEMA};
use crate::error::{Error, Result};

/// One (run, metric) comparison. Column order is the CSV layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub setting: String,
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub metric: String,
    pub origin: f64,
    pub composition: f64,
    pub delta: f64,
}

/// Rows sorted stably by (setting, seed); metrics follow key order within a
/// run. Only metrics reported by both origin and composition appear.
pub fn comparison_table(runs: &[CompositionRun]) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for run in runs {
        if run.schema != RUN_SCHEMA {
            return Err(Error::SchemaMismatch(format!("run manifest schema {} != {RUN_SCHEMA}", run.schema)));
        }
        for (metric, &origin) in &run.origin {
            let Some(&composition) = run.composition.get(metric) else { continue };
            rows.push(ComparisonRow {
                setting: run.setting.clone(),
                model: run.model.clone(),
                dataset: run.dataset.clone(),
                seed: run.seed,
                metric: metric.clone(),
                origin,
                composition,
                delta: composition - origin,
            });
        }
    }
    rows.sort_by(|a, b| a.setting.cmp(&b.setting).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

pub fn table_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["setting", "model", "dataset", "seed", "metric", "origin", "composition", "delta"])?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn table_json(rows: &[ComparisonRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}
