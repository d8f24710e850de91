use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, PropertyProportion, Sample};
use crate::error::{Error, Result};
use crate::nn::shuffled_indices;
use crate::seed::{derive_seed, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionFractions {
    pub target_train: f64,
    pub target_test: f64,
    pub shadow_train: f64,
    pub shadow_test: f64,
}

impl Default for PartitionFractions {
    fn default() -> Self {
        Self::quarters()
    }
}

impl PartitionFractions {
    pub fn quarters() -> Self {
        Self { target_train: 0.25, target_test: 0.25, shadow_train: 0.25, shadow_test: 0.25 }
    }

    fn as_array(&self) -> [(&'static str, f64); 4] {
        [
            ("target_train", self.target_train),
            ("target_test", self.target_test),
            ("shadow_train", self.shadow_train),
            ("shadow_test", self.shadow_test),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in self.as_array() {
            if !f.is_finite() || f < 0.0 {
                return Err(Error::InvalidSpec(format!("fraction {name} = {f} is negative")));
            }
        }
        let sum: f64 = self.as_array().iter().map(|(_, f)| f).sum();
        if sum > 1.0 + 1e-9 {
            return Err(Error::InvalidSpec(format!("partition fractions sum to {sum} > 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionSpec {
    pub fractions: PartitionFractions,
    pub target_train_proportion: PropertyProportion,
    pub shadow_train_proportion: PropertyProportion,
    /// Share of `target_train` handed to the adversary as partial training data.
    pub partial_fraction: f64,
    /// Stratify the partial subset by task label instead of drawing uniformly.
    #[serde(default)]
    pub partial_per_class: bool,
    #[serde(default)]
    pub query_proportions: Vec<PropertyProportion>,
    #[serde(default)]
    pub query_set_size: usize,
}

impl PartitionSpec {
    /// Quarter splits, balanced training proportions, half of target_train as partial data.
    pub fn balanced(num_properties: usize) -> Self {
        Self {
            fractions: PartitionFractions::quarters(),
            target_train_proportion: PropertyProportion::uniform(num_properties),
            shadow_train_proportion: PropertyProportion::uniform(num_properties),
            partial_fraction: 0.5,
            partial_per_class: false,
            query_proportions: Vec::new(),
            query_set_size: 0,
        }
    }
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self::balanced(2)
    }
}

/// The four-way partition plus the auxiliary sets derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub meta: DatasetMeta,
    pub spec: PartitionSpec,
    pub seed: u64,
    pub target_train: Vec<Sample>,
    pub target_test: Vec<Sample>,
    pub shadow_train: Vec<Sample>,
    pub shadow_test: Vec<Sample>,
    /// Subset of `target_train` known to the adversary.
    pub partial_aux: Vec<Sample>,
    /// One probe set per requested proportion, disjoint from all partitions.
    pub query_aux: BTreeMap<PropertyProportion, Vec<Sample>>,
    /// Samples assigned to nothing above.
    pub reserve: Vec<Sample>,
}

impl DatasetBundle {
    pub fn partitions(&self) -> [(&'static str, &[Sample]); 4] {
        [
            ("target_train", &self.target_train),
            ("target_test", &self.target_test),
            ("shadow_train", &self.shadow_train),
            ("shadow_test", &self.shadow_test),
        ]
    }

    /// Checks the structural invariants of the bundle.
    pub fn check_invariants(&self) -> Result<()> {
        let parts = self.partitions();
        let sets: Vec<HashSet<u64>> = parts.iter().map(|(_, s)| s.iter().map(|x| x.id).collect()).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                if !sets[i].is_disjoint(&sets[j]) {
                    return Err(Error::InvalidSpec(format!("{} and {} overlap", parts[i].0, parts[j].0)));
                }
            }
        }
        for (label, set) in &self.query_aux {
            if set.iter().any(|s| sets[0].contains(&s.id) || sets[2].contains(&s.id)) {
                return Err(Error::InvalidSpec(format!("query set {} overlaps a training partition", label.label())));
            }
        }
        if self.partial_aux.iter().any(|s| !sets[0].contains(&s.id)) {
            return Err(Error::InvalidSpec("partial_aux is not a subset of target_train".into()));
        }
        for (name, set) in [("target_test", &self.target_test), ("shadow_test", &self.shadow_test)] {
            let c = super::property_counts(set, self.meta.num_properties);
            let (lo, hi) = (c.iter().min().copied().unwrap_or(0), c.iter().max().copied().unwrap_or(0));
            if hi - lo > 1 {
                return Err(Error::InvalidSpec(format!("{name} is not property-balanced: {c:?}")));
            }
        }
        Ok(())
    }
}

/// Group pool positions by property value.
fn group_by_property(pool: &[Sample], num_properties: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); num_properties];
    for (i, s) in pool.iter().enumerate() {
        if s.property >= num_properties {
            groups.resize(s.property + 1, Vec::new());
        }
        groups[s.property].push(i);
    }
    groups
}

/// Draw `n` samples whose property counts follow `proportion` (largest-remainder
/// rounding), without replacement. The result keeps pool order.
pub fn sample_with_proportion(
    pool: &[Sample],
    proportion: &PropertyProportion,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let positions = draw_positions(pool, proportion, n, seed)?;
    Ok(positions.into_iter().map(|i| pool[i].clone()).collect())
}

fn draw_positions(pool: &[Sample], proportion: &PropertyProportion, n: usize, seed: u64) -> Result<Vec<usize>> {
    let counts = proportion.counts(n);
    let groups = group_by_property(pool, proportion.len());
    if groups.len() > proportion.len() {
        return Err(Error::InvalidSpec(format!(
            "pool holds property value {} but the proportion covers {} values",
            groups.len() - 1,
            proportion.len()
        )));
    }
    let mut rng = rng_for(seed);
    let mut chosen = Vec::with_capacity(n);
    for (v, (&want, group)) in counts.iter().zip(&groups).enumerate() {
        if group.len() < want {
            return Err(Error::InsufficientSamples(format!(
                "property {v}: need {want}, pool has {}",
                group.len()
            )));
        }
        let order = shuffled_indices(group.len(), &mut rng);
        chosen.extend(order.into_iter().take(want).map(|k| group[k]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// One fixed-size probe set per proportion, never reusing a pool sample.
pub fn build_query_aux(
    pool: &[Sample],
    proportions: &[PropertyProportion],
    n_per_set: usize,
    seed: u64,
) -> Result<BTreeMap<PropertyProportion, Vec<Sample>>> {
    let mut out = BTreeMap::new();
    let mut remaining: Vec<Sample> = pool.to_vec();
    for (i, proportion) in proportions.iter().enumerate() {
        if out.contains_key(proportion) {
            return Err(Error::InvalidSpec(format!("duplicate query proportion {}", proportion.label())));
        }
        let positions = draw_positions(&remaining, proportion, n_per_set, derive_seed(seed, "query_aux", i as u64))?;
        let taken: HashSet<usize> = positions.iter().copied().collect();
        let set: Vec<Sample> = positions.iter().map(|&p| remaining[p].clone()).collect();
        remaining = remaining
            .into_iter()
            .enumerate()
            .filter(|(p, _)| !taken.contains(p))
            .map(|(_, s)| s)
            .collect();
        out.insert(proportion.clone(), set);
    }
    Ok(out)
}

/// Split `samples` into target/shadow train/test partitions, the partial
/// training subset, query probe sets and the unassigned reserve.
pub fn partition_dataset(
    samples: &[Sample],
    meta: DatasetMeta,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<DatasetBundle> {
    spec.fractions.validate()?;
    if !(0.0..=1.0).contains(&spec.partial_fraction) {
        return Err(Error::InvalidSpec(format!("partial_fraction {} outside [0,1]", spec.partial_fraction)));
    }
    for p in [&spec.target_train_proportion, &spec.shadow_train_proportion]
        .into_iter()
        .chain(&spec.query_proportions)
    {
        if p.len() != meta.num_properties {
            return Err(Error::InvalidSpec(format!(
                "proportion {} has {} entries, dataset has {} property values",
                p.label(),
                p.len(),
                meta.num_properties
            )));
        }
    }
    let mut seen = HashSet::new();
    for s in samples {
        meta.validate(s)?;
        if !seen.insert(s.id) {
            return Err(Error::InvalidSpec(format!("duplicate sample id {}", s.id)));
        }
    }

    let n = samples.len();
    let size = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let mut rng = rng_for(derive_seed(seed, "partition", 0));
    // each property group is consumed front to back after one shuffle
    let mut groups: Groups = group_by_property(samples, meta.num_properties)
        .into_iter()
        .map(|g| {
            let order = shuffled_indices(g.len(), &mut rng);
            order.into_iter().map(|k| g[k]).collect()
        })
        .collect();

    let target_train = take_from(
        &mut groups,
        &spec.target_train_proportion.counts(size(spec.fractions.target_train)),
        samples,
        "target_train",
    )?;
    let shadow_train = take_from(
        &mut groups,
        &spec.shadow_train_proportion.counts(size(spec.fractions.shadow_train)),
        samples,
        "shadow_train",
    )?;
    let target_test = take_balanced(&mut groups, size(spec.fractions.target_test), samples, "target_test")?;
    let shadow_test = take_balanced(&mut groups, size(spec.fractions.shadow_test), samples, "shadow_test")?;

    let assigned: HashSet<u64> = [&target_train, &target_test, &shadow_train, &shadow_test]
        .iter()
        .flat_map(|p| p.iter().map(|s| s.id))
        .collect();
    let leftover: Vec<Sample> = samples.iter().filter(|s| !assigned.contains(&s.id)).cloned().collect();

    let query_aux = if spec.query_proportions.is_empty() {
        BTreeMap::new()
    } else {
        build_query_aux(&leftover, &spec.query_proportions, spec.query_set_size, derive_seed(seed, "query", 0))?
    };
    let queried: HashSet<u64> = query_aux.values().flat_map(|s| s.iter().map(|x| x.id)).collect();
    let reserve = leftover.into_iter().filter(|s| !queried.contains(&s.id)).collect();

    let partial_aux = draw_partial(&target_train, meta, spec, derive_seed(seed, "partial", 0))?;

    let bundle = DatasetBundle {
        meta,
        spec: spec.clone(),
        seed,
        target_train,
        target_test,
        shadow_train,
        shadow_test,
        partial_aux,
        query_aux,
        reserve,
    };
    bundle.check_invariants()?;
    Ok(bundle)
}

type Groups = Vec<std::collections::VecDeque<usize>>;

fn take_from(groups: &mut Groups, counts: &[usize], samples: &[Sample], name: &str) -> Result<Vec<Sample>> {
    for (v, (&c, g)) in counts.iter().zip(groups.iter()).enumerate() {
        if g.len() < c {
            return Err(Error::InsufficientSamples(format!("{name}: property {v} needs {c}, {} left", g.len())));
        }
    }
    let mut picked: Vec<usize> = Vec::new();
    for (&c, g) in counts.iter().zip(groups.iter_mut()) {
        picked.extend(g.drain(..c));
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| samples[i].clone()).collect())
}

/// Equal counts per property value, truncated to the smallest class when short.
fn take_balanced(groups: &mut Groups, n: usize, samples: &[Sample], name: &str) -> Result<Vec<Sample>> {
    let mut counts = PropertyProportion::uniform(groups.len()).counts(n);
    if counts.iter().zip(groups.iter()).any(|(c, g)| *c > g.len()) {
        let floor = groups.iter().map(|g| g.len()).min().unwrap_or(0);
        if floor == 0 && n > 0 {
            return Err(Error::InsufficientSamples(format!("{name}: a property value is exhausted")));
        }
        counts.iter_mut().for_each(|c| *c = (*c).min(floor));
    }
    take_from(groups, &counts, samples, name)
}

fn draw_partial(target_train: &[Sample], meta: DatasetMeta, spec: &PartitionSpec, seed: u64) -> Result<Vec<Sample>> {
    let n = (spec.partial_fraction * target_train.len() as f64).round() as usize;
    let mut rng = rng_for(seed);
    let mut positions: Vec<usize> = if spec.partial_per_class {
        let mut by_class = vec![Vec::new(); meta.num_classes];
        for (i, s) in target_train.iter().enumerate() {
            by_class[s.task_label].push(i);
        }
        let class_share = PropertyProportion::normalized(by_class.iter().map(|g| g.len() as f64).collect())?;
        let counts = class_share.counts(n);
        let mut out = Vec::with_capacity(n);
        for (g, c) in by_class.iter().zip(counts) {
            let order = shuffled_indices(g.len(), &mut rng);
            out.extend(order.into_iter().take(c).map(|k| g[k]));
        }
        out
    } else {
        shuffled_indices(target_train.len(), &mut rng).into_iter().take(n).collect()
    };
    positions.sort_unstable();
    Ok(positions.into_iter().map(|i| target_train[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::property_counts;

    fn meta() -> DatasetMeta {
        DatasetMeta { channels: 1, height: 1, width: 1, num_classes: 2, num_attributes: 2, num_properties: 2 }
    }

    /// `n` samples, alternating property values.
    fn pool(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: i as u64,
                features: vec![(i % 10) as f64 / 10.0],
                task_label: (i / 2) % 2,
                attribute: i % 2,
                property: i % 2,
            })
            .collect()
    }

    fn prop(w: &[f64]) -> PropertyProportion {
        PropertyProportion::new(w.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_quarter_split() {
        let b = partition_dataset(&pool(1000), meta(), &PartitionSpec::balanced(2), 1).unwrap();
        for (_, part) in b.partitions() {
            assert_eq!(part.len(), 250);
        }
        assert_eq!(property_counts(&b.target_train, 2), vec![125, 125]);
        assert_eq!(property_counts(&b.shadow_train, 2), vec![125, 125]);
        b.check_invariants().unwrap();
    }

    #[test]
    fn biased_target_train() {
        let spec = PartitionSpec { target_train_proportion: prop(&[0.2, 0.8]), ..PartitionSpec::balanced(2) };
        let b = partition_dataset(&pool(1000), meta(), &spec, 1).unwrap();
        assert_eq!(property_counts(&b.target_train, 2), vec![50, 200]);
        // the second test split runs short on property 1 and is truncated to stay balanced
        let c = property_counts(&b.shadow_test, 2);
        assert_eq!(c[0], c[1]);
    }

    #[test]
    fn partition_is_deterministic() {
        let spec = PartitionSpec { target_train_proportion: prop(&[0.2, 0.8]), ..PartitionSpec::balanced(2) };
        let a = partition_dataset(&pool(1000), meta(), &spec, 9).unwrap();
        let b = partition_dataset(&pool(1000), meta(), &spec, 9).unwrap();
        assert_eq!(a, b);
        let c = partition_dataset(&pool(1000), meta(), &spec, 10).unwrap();
        assert_ne!(crate::data::ids(&a.target_train), crate::data::ids(&c.target_train));
    }

    #[test]
    fn invalid_fractions() {
        let mut spec = PartitionSpec::balanced(2);
        spec.fractions.target_train = 0.45;
        assert!(matches!(partition_dataset(&pool(100), meta(), &spec, 0), Err(Error::InvalidSpec(_))));
        spec.fractions.target_train = -0.1;
        assert!(matches!(partition_dataset(&pool(100), meta(), &spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn unachievable_proportion() {
        let spec = PartitionSpec { target_train_proportion: prop(&[1.0, 0.0]), ..PartitionSpec::balanced(2) };
        // 250 of property 0 requested, only 50 exist
        assert!(matches!(
            partition_dataset(&pool(100), meta(), &PartitionSpec { fractions: PartitionFractions { target_train: 0.9, target_test: 0.0, shadow_train: 0.0, shadow_test: 0.0 }, ..spec }, 0),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn sample_with_proportion_examples() {
        let p100 = pool(100);
        let s = sample_with_proportion(&p100, &prop(&[0.2, 0.8]), 10, 3).unwrap();
        assert_eq!(property_counts(&s, 2), vec![2, 8]);
        let s = sample_with_proportion(&p100, &prop(&[1.0, 0.0]), 5, 3).unwrap();
        assert_eq!(property_counts(&s, 2), vec![5, 0]);
        let s = sample_with_proportion(&p100, &prop(&[1.0 / 3.0, 2.0 / 3.0]), 10, 3).unwrap();
        assert_eq!(property_counts(&s, 2), vec![3, 7]);
        assert!(matches!(
            sample_with_proportion(&p100, &prop(&[1.0, 0.0]), 51, 3),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn query_aux_examples() {
        let p100 = pool(100);
        let q = build_query_aux(&p100, &[prop(&[0.2, 0.8]), prop(&[0.5, 0.5])], 20, 4).unwrap();
        assert_eq!(property_counts(&q[&prop(&[0.2, 0.8])], 2), vec![4, 16]);
        assert_eq!(property_counts(&q[&prop(&[0.5, 0.5])], 2), vec![10, 10]);
        let a: HashSet<u64> = q.values().next().unwrap().iter().map(|s| s.id).collect();
        assert!(q.values().nth(1).unwrap().iter().all(|s| !a.contains(&s.id)));

        let small = pool(20);
        let whole = build_query_aux(&small, &[prop(&[0.5, 0.5])], 20, 4).unwrap();
        assert_eq!(crate::data::ids(&whole[&prop(&[0.5, 0.5])]), crate::data::ids(&small));

        assert!(matches!(
            build_query_aux(&small, &[prop(&[0.5, 0.5]), prop(&[0.2, 0.8])], 15, 4),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn partial_aux_per_class_is_stratified() {
        let spec = PartitionSpec { partial_per_class: true, ..PartitionSpec::balanced(2) };
        let b = partition_dataset(&pool(1000), meta(), &spec, 2).unwrap();
        assert_eq!(b.partial_aux.len(), 125);
        let per_class = b.partial_aux.iter().filter(|s| s.task_label == 0).count() as i64;
        let share = b.target_train.iter().filter(|s| s.task_label == 0).count() as f64 / 250.0;
        assert!((per_class - (share * 125.0).round() as i64).abs() <= 1);
    }
}
