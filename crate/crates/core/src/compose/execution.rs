//! Execution-level compositions: adversarial L2 distances become an extra
//! feature of membership and property inference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::ks_shift;
use crate::attacks::meminf::{feature_schema_hash, prepare_meminf, MemInfContext, MemInfOutcome};
use crate::attacks::propinf::{propinf_attack, propinf_fleet_eval, PropInfConfig, PropInfOutput, QueryAux};
use crate::attacks::{AdvMode, AttackResult, MemInfConfig, MemInfSetting, PgdParams, SquareParams};
use crate::data::DatasetBundle;
use crate::error::Result;
use crate::models::{FleetMember, TrainedModel};

/// Budgets of both adversarial searches; white-box settings use PGD, the
/// others Square.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvBudget {
    pub pgd: PgdParams,
    pub square: SquareParams,
}

impl AdvBudget {
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { pgd: PgdParams { epsilon, ..self.pgd }, square: SquareParams { epsilon, ..self.square } }
    }

    pub fn mode_for(&self, setting: MemInfSetting) -> AdvMode {
        match setting {
            MemInfSetting::WbShadow | MemInfSetting::WbPartial => AdvMode::Pgd(self.pgd),
            _ => AdvMode::Square(self.square),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PairedOutcome<T> {
    pub origin: T,
    pub composition: T,
    pub diagnostics: BTreeMap<String, f64>,
    /// Named hashes of what each side consumed.
    pub artifacts: BTreeMap<String, String>,
}

/// ADV -> MemInf in a prepared context: origin and composition share the
/// split and shadow model; only the feature vector differs.
pub fn adv_to_meminf_in(ctx: &MemInfContext<'_>, budget: &AdvBudget, config: &MemInfConfig) -> Result<PairedOutcome<MemInfOutcome>> {
    let mode = budget.mode_for(ctx.setting);
    let origin = ctx.run(None, config)?;
    let composition = ctx.run(Some(&mode), config)?;
    let mut diagnostics = BTreeMap::new();
    let mut artifacts = BTreeMap::new();
    artifacts.insert("split".to_string(), ctx.split.hash());
    if !composition.eval_records.is_empty() {
        let access = ctx.setting.access();
        artifacts.insert("origin_feature_schema".into(), feature_schema_hash(&origin.eval_records, access));
        artifacts.insert("composition_feature_schema".into(), feature_schema_hash(&composition.eval_records, access));
        let l2 = |member: u8| -> Vec<f64> {
            composition.eval_records.iter().filter(|r| r.member == Some(member)).filter_map(|r| r.adv_l2).collect()
        };
        let (m, n) = (l2(1), l2(0));
        if !m.is_empty() && !n.is_empty() {
            let ks = ks_shift(&m, &n);
            diagnostics.insert("ks_statistic".into(), ks.statistic);
            diagnostics.insert("ks_p_value".into(), ks.p_value);
            diagnostics.insert("ks_reject".into(), f64::from(u8::from(ks.reject)));
            diagnostics.insert("member_mean_l2".into(), m.iter().sum::<f64>() / m.len() as f64);
            diagnostics.insert("nonmember_mean_l2".into(), n.iter().sum::<f64>() / n.len() as f64);
        }
    }
    Ok(PairedOutcome { origin, composition, diagnostics, artifacts })
}

pub fn adv_to_meminf(
    target: &TrainedModel,
    bundle: &DatasetBundle,
    setting: MemInfSetting,
    budget: &AdvBudget,
    config: &MemInfConfig,
) -> Result<PairedOutcome<MemInfOutcome>> {
    adv_to_meminf_in(&prepare_meminf(target, bundle, setting, config)?, budget, config)
}

/// ADV -> PropInf against a target: fingerprints widened by the L2 vector.
pub fn adv_to_propinf(
    target: &TrainedModel,
    fleet: &[FleetMember],
    query_aux: &QueryAux,
    mode: &AdvMode,
    config: &PropInfConfig,
) -> Result<PairedOutcome<PropInfOutput>> {
    let (origin, _) = propinf_attack(target, fleet, query_aux, None, config)?;
    let (composition, _) = propinf_attack(target, fleet, query_aux, Some(mode), config)?;
    let diagnostics = BTreeMap::from([
        ("origin_confidence".to_string(), origin.confidence),
        ("composition_confidence".to_string(), composition.confidence),
    ]);
    Ok(PairedOutcome { origin, composition, diagnostics, artifacts: BTreeMap::new() })
}

/// ADV -> PropInf scored on a held-out fleet with known labels.
pub fn adv_to_propinf_fleet_eval(
    train: &[FleetMember],
    held_out: &[FleetMember],
    query_aux: &QueryAux,
    mode: &AdvMode,
    config: &PropInfConfig,
) -> Result<PairedOutcome<AttackResult>> {
    let origin = propinf_fleet_eval(train, held_out, query_aux, None, config)?;
    let composition = propinf_fleet_eval(train, held_out, query_aux, Some(mode), config)?;
    Ok(PairedOutcome { origin, composition, diagnostics: BTreeMap::new(), artifacts: BTreeMap::new() })
}
