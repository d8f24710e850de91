//! Compositions: a support attack shapes the inputs (preparation), the
//! features (execution) or the output scores (evaluation) of a primary
//! attack. Two chains run ADV -> PropInf first and feed the result onward.

mod chain;
mod evaluation;
mod execution;
mod preparation;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chain::{chain_adv_propinf_attrinf, chain_adv_propinf_meminf, ChainOutcome};
pub use evaluation::{propinf_to_lira, propinf_to_meminf, train_calibrated, CalibratedOutcome, CalibrationHead};
pub use execution::{adv_to_meminf, adv_to_meminf_in, adv_to_propinf, adv_to_propinf_fleet_eval, AdvBudget, PairedOutcome};
pub use preparation::{propinf_to_attrinf, rebalance_pool, rebalance_proportion, sampling_ratio, PreparationOutcome};

pub const RUN_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Adv,
    MemInf,
    AttrInf,
    PropInf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Preparation,
    Execution,
    Evaluation,
}

/// How PropInf output drives rebalancing: with the meta-classifier's
/// confidence, or trusting the predicted label fully.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Empirical,
    Theoretical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub primary_attack: AttackKind,
    pub support_attack: AttackKind,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Intermediate attack of a chain (support -> via -> primary).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<AttackKind>,
}

impl CompositionPlan {
    pub const fn propinf_to_attrinf(mode: Mode) -> Self {
        Self { primary_attack: AttackKind::AttrInf, support_attack: AttackKind::PropInf, level: Level::Preparation, mode: Some(mode), via: None }
    }

    pub const fn adv_to_meminf() -> Self {
        Self { primary_attack: AttackKind::MemInf, support_attack: AttackKind::Adv, level: Level::Execution, mode: None, via: None }
    }

    pub const fn adv_to_propinf() -> Self {
        Self { primary_attack: AttackKind::PropInf, support_attack: AttackKind::Adv, level: Level::Execution, mode: None, via: None }
    }

    pub const fn propinf_to_meminf() -> Self {
        Self { primary_attack: AttackKind::MemInf, support_attack: AttackKind::PropInf, level: Level::Evaluation, mode: None, via: None }
    }

    /// ADV -> PropInf -> AttrInf, empirical rebalancing only.
    pub const fn chain_adv_propinf_attrinf() -> Self {
        Self {
            primary_attack: AttackKind::AttrInf,
            support_attack: AttackKind::Adv,
            level: Level::Preparation,
            mode: Some(Mode::Empirical),
            via: Some(AttackKind::PropInf),
        }
    }

    /// ADV -> PropInf -> MemInf.
    pub const fn chain_adv_propinf_meminf() -> Self {
        Self {
            primary_attack: AttackKind::MemInf,
            support_attack: AttackKind::Adv,
            level: Level::Evaluation,
            mode: None,
            via: Some(AttackKind::PropInf),
        }
    }

    pub fn allowed() -> Vec<CompositionPlan> {
        vec![
            Self::propinf_to_attrinf(Mode::Empirical),
            Self::propinf_to_attrinf(Mode::Theoretical),
            Self::adv_to_meminf(),
            Self::adv_to_propinf(),
            Self::propinf_to_meminf(),
            Self::chain_adv_propinf_attrinf(),
            Self::chain_adv_propinf_meminf(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if Self::allowed().contains(self) {
            Ok(())
        } else {
            let names: Vec<String> = Self::allowed().iter().map(|p| p.name()).collect();
            Err(Error::InvalidPlan(format!("{self:?} is not one of: {}", names.join(", "))))
        }
    }

    pub fn is_chain(&self) -> bool {
        self.via.is_some()
    }

    fn kind_name(k: AttackKind) -> &'static str {
        match k {
            AttackKind::Adv => "adv",
            AttackKind::MemInf => "meminf",
            AttackKind::AttrInf => "attrinf",
            AttackKind::PropInf => "propinf",
        }
    }

    /// e.g. `adv_to_meminf`, `propinf_to_attrinf_empirical`, `chain_adv_propinf_meminf`.
    pub fn name(&self) -> String {
        let mut s = match self.via {
            Some(v) => format!(
                "chain_{}_{}_{}",
                Self::kind_name(self.support_attack),
                Self::kind_name(v),
                Self::kind_name(self.primary_attack)
            ),
            None => format!("{}_to_{}", Self::kind_name(self.support_attack), Self::kind_name(self.primary_attack)),
        };
        if let (Some(m), None) = (self.mode, self.via) {
            s.push_str(match m {
                Mode::Empirical => "_empirical",
                Mode::Theoretical => "_theoretical",
            });
        }
        s
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::allowed().into_iter().find(|p| p.name() == name).ok_or_else(|| {
            let names: Vec<String> = Self::allowed().iter().map(|p| p.name()).collect();
            Error::InvalidPlan(format!("unknown plan {name:?}; allowed: {}", names.join(", ")))
        })
    }
}

impl fmt::Display for CompositionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Manifest of one composition run: what was run, on which upstream
/// artifacts, and the origin and composition metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionRun {
    pub schema: u32,
    pub plan: CompositionPlan,
    pub setting: String,
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    /// Upstream artifact name -> content hash.
    pub artifacts: BTreeMap<String, String>,
    pub origin: BTreeMap<String, f64>,
    pub composition: BTreeMap<String, f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl CompositionRun {
    pub fn new(plan: CompositionPlan, setting: &str, dataset: &str, model: &str, seed: u64) -> Self {
        Self {
            schema: RUN_SCHEMA,
            plan,
            setting: setting.into(),
            dataset: dataset.into(),
            model: model.into(),
            seed,
            artifacts: BTreeMap::new(),
            origin: BTreeMap::new(),
            composition: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let run: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if run.schema != RUN_SCHEMA {
            return Err(Error::SchemaMismatch(format!("run manifest schema {} != {RUN_SCHEMA}", run.schema)));
        }
        Ok(run)
    }
}
