//! The four standalone inference-time attacks and LiRA.

pub mod adv;
pub mod attrinf;
pub mod branch;
pub mod cache;
pub mod lira;
pub mod meminf;
pub mod propinf;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::analysis::{accuracy, auc, compute_metrics, macro_f1, LOW_FPR};
use crate::error::Result;

pub use adv::{adv_l2_profile, pgd_attack, square_attack, AdvMode, AdvResult, PgdParams, SquareParams};
pub use attrinf::{attrinf_attack, AttrInfConfig, ClassifierConfig, DenseClassifier};
pub use branch::AttackTrainConfig;
pub use lira::{lira_attack, train_lira_fleet, GaussianFit, LiraAux, LiraFleet};
pub use meminf::{
    build_meminf_features, meminf_attack, prepare_meminf, train_meminf_attack_model, Access, AttackFeatureRecord,
    MemInfAttackModel, MemInfConfig, MemInfContext, MemInfOutcome, MemInfSetting, MemInfSplit,
};
pub use propinf::{
    propinf_attack, propinf_features, propinf_fleet_eval, MetaClassifier, PropInfConfig, PropInfOutput, QueryAux,
};

/// Per-sample attack output. For membership attacks scores are oriented so
/// that larger means "member".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub attack: String,
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
    pub ground_truth: Vec<usize>,
    pub metrics: BTreeMap<String, f64>,
}

impl AttackResult {
    /// Binary result with accuracy, F1, AUC and TPR at 0.1% FPR, member = 1.
    pub fn binary(attack: &str, scores: Vec<f64>, predictions: Vec<usize>, ground_truth: Vec<usize>) -> Result<Self> {
        let report = compute_metrics(&scores, &predictions, &ground_truth, &[LOW_FPR], 1)?;
        Ok(Self { attack: attack.into(), scores, predictions, ground_truth, metrics: report.to_map() })
    }

    /// Multi-class result from class probabilities: accuracy and macro-F1,
    /// plus AUC when there are two classes and both occur. Scores are the
    /// class-1 probability for two classes, else the top probability.
    pub fn multiclass(attack: &str, probs: &Array2<f64>, predictions: Vec<usize>, ground_truth: Vec<usize>) -> Result<Self> {
        let k = probs.ncols();
        let scores: Vec<f64> = if k == 2 {
            probs.column(1).to_vec()
        } else {
            probs.rows().into_iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect()
        };
        let mut metrics = BTreeMap::new();
        metrics.insert("accuracy".to_string(), accuracy(&predictions, &ground_truth));
        metrics.insert("f1".to_string(), macro_f1(&predictions, &ground_truth, k));
        if k == 2 {
            let truth: Vec<bool> = ground_truth.iter().map(|&t| t == 1).collect();
            if let Ok(a) = auc(&scores, &truth) {
                metrics.insert("auc".to_string(), a);
            }
        }
        Ok(Self { attack: attack.into(), scores, predictions, ground_truth, metrics })
    }

    pub fn metric(&self, name: &str) -> f64 {
        self.metrics.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn accuracy(&self) -> f64 {
        self.metric("accuracy")
    }

    pub fn auc(&self) -> f64 {
        self.metric("auc")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Columns: index, score, prediction, ground_truth.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "score", "prediction", "ground_truth"])?;
        for i in 0..self.scores.len() {
            w.write_record([
                i.to_string(),
                self.scores[i].to_string(),
                self.predictions[i].to_string(),
                self.ground_truth[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_result_has_required_metrics() {
        let r = AttackResult::binary("t", vec![0.9, 0.1, 0.8, 0.3], vec![1, 0, 1, 0], vec![1, 0, 0, 1]).unwrap();
        for k in ["accuracy", "f1", "auc", "tpr_at_fpr_0.001"] {
            assert!(r.metrics.contains_key(k), "{k}");
        }
        let dir = tempfile::tempdir().unwrap();
        r.write_csv(&dir.path().join("r.csv")).unwrap();
        r.write_json(&dir.path().join("r.json")).unwrap();
        let back: AttackResult = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }
}
