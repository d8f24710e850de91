use std::path::Path;

use super::{DatasetMeta, Sample};
use crate::error::{Error, Result};

/// Load an externally supplied labeled set.
///
/// Expected CSV layout, with a header row: `task_label,attribute,property,f0,f1,...`.
/// Feature values must already be scaled to `[0,1]`. Sample ids are row indices.
pub fn load_csv(path: &Path, meta: DatasetMeta) -> Result<Vec<Sample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse_label = |i: usize| -> Result<usize> {
            record
                .get(i)
                .ok_or_else(|| Error::ShapeMismatch(format!("row {row}: missing column {i}")))?
                .trim()
                .parse()
                .map_err(|e| Error::InvalidSpec(format!("row {row} column {i}: {e}")))
        };
        let task_label = parse_label(0)?;
        let attribute = parse_label(1)?;
        let property = parse_label(2)?;
        let features = record
            .iter()
            .skip(3)
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::InvalidSpec(format!("row {row}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let sample = Sample { id: row as u64, features, task_label, attribute, property };
        meta.validate(&sample)?;
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_rows_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "task,attr,prop,f0,f1\n1,0,1,0.5,0.25\n0,1,0,1.0,0.0\n").unwrap();
        let meta = DatasetMeta { channels: 1, height: 1, width: 2, num_classes: 2, num_attributes: 2, num_properties: 2 };
        let s = load_csv(&path, meta).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].features, vec![1.0, 0.0]);
        assert_eq!((s[0].task_label, s[0].attribute, s[0].property), (1, 0, 1));

        std::fs::write(&path, "task,attr,prop,f0,f1\n1,0,1,0.5,2.0\n").unwrap();
        assert!(load_csv(&path, meta).is_err());
    }
}
