//! Chains: ADV -> PropInf, whose inference then drives AttrInf
//! (empirical rebalancing) or MemInf (calibration).

use super::evaluation::{propinf_to_meminf, CalibratedOutcome};
use super::execution::{adv_to_propinf, PairedOutcome};
use super::preparation::{propinf_to_attrinf, PreparationOutcome};
use super::Mode;
use crate::attacks::meminf::MemInfContext;
use crate::attacks::propinf::{PropInfConfig, PropInfOutput, QueryAux};
use crate::attacks::{AdvMode, AttrInfConfig, MemInfConfig};
use crate::data::Sample;
use crate::error::Result;
use crate::models::{FleetMember, TrainedModel};

#[derive(Clone, Debug)]
pub struct ChainOutcome<T> {
    pub propinf: PairedOutcome<PropInfOutput>,
    /// Confidence handed to the last stage.
    pub fed_confidence: f64,
    pub downstream: T,
}

/// ADV -> PropInf -> AttrInf.
#[allow(clippy::too_many_arguments)]
pub fn chain_adv_propinf_attrinf(
    target: &TrainedModel,
    fleet: &[FleetMember],
    query_aux: &QueryAux,
    mode: &AdvMode,
    propinf_config: &PropInfConfig,
    aux_pool: &[Sample],
    eval: &[Sample],
    attrinf_config: &AttrInfConfig,
    seed: u64,
) -> Result<ChainOutcome<PreparationOutcome>> {
    let propinf = adv_to_propinf(target, fleet, query_aux, mode, propinf_config)?;
    let fed = propinf.composition.clone();
    let meta = target.meta;
    let downstream = propinf_to_attrinf(
        target,
        meta.num_attributes,
        meta.num_properties,
        &fed,
        aux_pool,
        Mode::Empirical,
        eval,
        attrinf_config,
        seed,
    )?;
    Ok(ChainOutcome { fed_confidence: fed.confidence, propinf, downstream })
}

/// ADV -> PropInf -> MemInf in a prepared membership context.
pub fn chain_adv_propinf_meminf(
    ctx: &MemInfContext<'_>,
    fleet: &[FleetMember],
    query_aux: &QueryAux,
    mode: &AdvMode,
    propinf_config: &PropInfConfig,
    meminf_config: &MemInfConfig,
) -> Result<ChainOutcome<CalibratedOutcome>> {
    let propinf = adv_to_propinf(ctx.target, fleet, query_aux, mode, propinf_config)?;
    let fed = propinf.composition.clone();
    let downstream = propinf_to_meminf(ctx, Some(&fed), meminf_config)?;
    Ok(ChainOutcome { fed_confidence: fed.confidence, propinf, downstream })
}
