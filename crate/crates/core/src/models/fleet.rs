use rayon::prelude::*;

use super::{train_model, DatasetMeta, ModelConfig, TrainedModel};
use crate::data::{sample_with_proportion, PropertyProportion, Sample};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct FleetMember {
    pub model: TrainedModel,
    pub proportion: PropertyProportion,
    pub seed: u64,
}

/// Train `per_label` shadow models for every proportion label. Each member
/// draws its own `train_size` subset of `pool` at its label's proportion and
/// is trained with `config` under a fresh derived seed; `test` drives the
/// overfitting cutoff. Jobs run on the rayon pool; results are ordered by
/// (label index, replica).
#[allow(clippy::too_many_arguments)]
pub fn train_shadow_fleet(
    config: &ModelConfig,
    meta: DatasetMeta,
    pool: &[Sample],
    test: &[Sample],
    labels: &[PropertyProportion],
    per_label: usize,
    train_size: usize,
    seed: u64,
) -> Result<Vec<FleetMember>> {
    if labels.is_empty() {
        return Err(Error::InvalidSpec("shadow fleet needs at least one proportion label".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..labels.len()).flat_map(|l| (0..per_label).map(move |r| (l, r))).collect();
    jobs.par_iter()
        .map(|&(l, r)| {
            let member_seed = derive_seed(seed, "fleet", (l * per_label + r) as u64);
            let subset = sample_with_proportion(pool, &labels[l], train_size, derive_seed(member_seed, "subset", 0))?;
            let cfg = ModelConfig { seed: derive_seed(member_seed, "model", 0), ..config.clone() };
            let model = train_model(&cfg, meta, &subset, test)?;
            Ok(FleetMember { model, proportion: labels[l].clone(), seed: member_seed })
        })
        .collect()
}
