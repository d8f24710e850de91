//! PropInf -> AttrInf: resample the auxiliary pool against the inferred
//! property bias, then run the unchanged attribute attack on it.

use super::Mode;
use crate::attacks::propinf::PropInfOutput;
use crate::attacks::{attrinf_attack, AttackResult, AttrInfConfig};
use crate::data::{property_counts, sample_with_proportion, PropertyProportion, Sample};
use crate::error::{Error, Result};
use crate::models::WhiteBox;
use crate::seed::{ids_hash, json_hash};

/// Sampling ratio `c * (1 - p)` of a property value inferred at share `p`
/// with confidence `c`.
pub fn sampling_ratio(c: f64, p: f64) -> f64 {
    c * (1.0 - p)
}

/// Target property proportion of the resampled pool. Each value's pool
/// frequency is scaled by its ratio, where the unconfident share `1 - c`
/// falls back to the uniform proportion, and the result is normalized.
/// Theoretical mode uses `c = 1`.
pub fn rebalance_proportion(pool_counts: &[usize], inferred: &PropInfOutput, mode: Mode) -> Result<PropertyProportion> {
    let p = inferred.predicted.weights();
    if p.len() != pool_counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "inferred proportion has {} values, pool has {}",
            p.len(),
            pool_counts.len()
        )));
    }
    let c = match mode {
        Mode::Empirical => inferred.confidence.clamp(0.0, 1.0),
        Mode::Theoretical => 1.0,
    };
    let uniform = 1.0 / p.len() as f64;
    let weights: Vec<f64> = p
        .iter()
        .zip(pool_counts)
        .map(|(&pv, &n)| n as f64 * (sampling_ratio(c, pv) + sampling_ratio(1.0 - c, uniform)))
        .collect();
    PropertyProportion::normalized(weights)
}

/// Largest subset of `pool` (pool order kept) whose property counts follow
/// the rebalanced proportion.
pub fn rebalance_pool(
    pool: &[Sample],
    num_properties: usize,
    inferred: &PropInfOutput,
    mode: Mode,
    seed: u64,
) -> Result<Vec<Sample>> {
    let counts = property_counts(pool, num_properties);
    let target = rebalance_proportion(&counts, inferred, mode)?;
    let mut n = counts
        .iter()
        .zip(target.weights())
        .filter(|(_, &t)| t > 0.0)
        .map(|(&c, &t)| (c as f64 / t + 1e-9).floor() as usize)
        .min()
        .unwrap_or(0)
        .min(pool.len());
    loop {
        match sample_with_proportion(pool, &target, n, seed) {
            Err(Error::InsufficientSamples(_)) if n > 0 => n -= 1,
            other => return other,
        }
    }
}

/// Origin and rebalanced attribute attacks with identical attack settings.
#[derive(Clone, Debug)]
pub struct PreparationOutcome {
    pub origin: AttackResult,
    pub composition: AttackResult,
    pub resampled: Vec<Sample>,
    pub origin_aux_hash: String,
    pub composition_aux_hash: String,
    /// Hash of the attack configuration, shared by both runs.
    pub config_hash: String,
    pub confidence: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn propinf_to_attrinf(
    target: &impl WhiteBox,
    num_attributes: usize,
    num_properties: usize,
    inferred: &PropInfOutput,
    aux_pool: &[Sample],
    mode: Mode,
    eval: &[Sample],
    config: &AttrInfConfig,
    seed: u64,
) -> Result<PreparationOutcome> {
    let origin = attrinf_attack(target, num_attributes, aux_pool, eval, config)?;
    let resampled = rebalance_pool(aux_pool, num_properties, inferred, mode, seed)?;
    let composition = attrinf_attack(target, num_attributes, &resampled, eval, config)?;
    Ok(PreparationOutcome {
        origin,
        composition,
        origin_aux_hash: ids_hash(aux_pool.iter().map(|s| s.id)),
        composition_aux_hash: ids_hash(resampled.iter().map(|s| s.id)),
        resampled,
        config_hash: json_hash(config),
        confidence: inferred.confidence,
    })
}
