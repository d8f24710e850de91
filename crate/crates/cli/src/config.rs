//! Experiment configuration: one TOML file, validated as a whole and
//! canonicalized before hashing.

use std::path::PathBuf;

use infercomp_core::attacks::{AttrInfConfig, MemInfConfig, MemInfSetting, PropInfConfig};
use infercomp_core::compose::{AdvBudget, AttackKind, CompositionPlan};
use infercomp_core::data::SyntheticSpec;
use infercomp_core::seed::derive_seed;
use infercomp_core::{DatasetMeta, ModelConfig, PartitionSpec, PropertyProportion};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Composition plan names, e.g. `adv_to_meminf`.
    #[serde(default)]
    pub compositions: Vec<String>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub target: ModelConfig,
    #[serde(default)]
    pub fleet: FleetConfig,
    #[serde(default)]
    pub attacks: AttackConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Synthetic generator by default; `csv` switches to an external file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub synthetic: SyntheticSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub meta: DatasetMeta,
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match &self.csv {
            Some(c) => c.path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned()),
            None => "synthetic".into(),
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        match &self.csv {
            Some(c) => c.meta,
            None => self.synthetic.meta(),
        }
    }
}

/// Shadow fleet for property inference. The labels double as the query
/// proportions unless the partition names its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub labels: Vec<PropertyProportion>,
    pub per_label: usize,
    pub train_size: usize,
    pub query_set_size: usize,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self { labels: Vec::new(), per_label: 10, train_size: 400, query_set_size: 20 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropInfAdv {
    #[default]
    Pgd,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Membership settings by name, e.g. `bb_shadow`.
    pub meminf_settings: Vec<String>,
    /// Search used for the L2 distances of property fingerprints.
    pub propinf_adv: PropInfAdv,
    pub adv: AdvBudget,
    pub meminf: MemInfConfig,
    pub propinf: PropInfConfig,
    pub attrinf: AttrInfConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            meminf_settings: MemInfSetting::ALL.iter().map(|s| s.name().to_string()).collect(),
            propinf_adv: PropInfAdv::Pgd,
            adv: AdvBudget::default(),
            meminf: MemInfConfig::default(),
            propinf: PropInfConfig::default(),
            attrinf: AttrInfConfig::default(),
        }
    }
}

impl AttackConfig {
    pub fn settings(&self) -> Vec<MemInfSetting> {
        self.meminf_settings.iter().filter_map(|s| MemInfSetting::parse(s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Columns kept in the report; empty keeps every metric.
    pub report: Vec<String>,
    pub fpr_targets: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { report: vec!["accuracy".into(), "auc".into(), "f1".into()], fpr_targets: vec![0.001] }
    }
}

impl ExperimentConfig {
    /// Canonical TOML: every field spelled out, fixed order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    /// Seed of job `index` in `stage`.
    pub fn stage_seed(&self, stage: &str, index: u64) -> u64 {
        derive_seed(self.seed, stage, index)
    }

    pub fn plans(&self) -> Vec<CompositionPlan> {
        self.compositions.iter().filter_map(|n| CompositionPlan::parse(n).ok()).collect()
    }

    /// Partition spec with the fleet labels filled in as query proportions.
    pub fn effective_partition(&self) -> PartitionSpec {
        let mut spec = self.partition.clone();
        if spec.query_proportions.is_empty() && !self.fleet.labels.is_empty() {
            spec.query_proportions = self.fleet.labels.clone();
        }
        if spec.query_set_size == 0 {
            spec.query_set_size = self.fleet.query_set_size;
        }
        spec
    }

    pub fn needs_fleet(&self) -> bool {
        self.plans().iter().any(|p| p.support_attack == AttackKind::PropInf || p.primary_attack == AttackKind::PropInf || p.via.is_some())
            || !self.fleet.labels.is_empty()
    }
}

/// Parse and check `raw`, returning every violation found.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, Vec<String>> {
    let cfg: ExperimentConfig = toml::from_str(raw).map_err(|e| vec![e.to_string().trim_end().to_string()])?;
    let errors = check(&cfg);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

fn check(cfg: &ExperimentConfig) -> Vec<String> {
    let mut errors = Vec::new();
    let mut push = |field: &str, msg: String| errors.push(format!("{field}: {msg}"));

    if let Some(csv) = &cfg.dataset.csv {
        if csv.path.as_os_str().is_empty() {
            push("dataset.csv.path", "empty path".into());
        }
    } else if let Err(e) = cfg.dataset.synthetic.validate() {
        push("dataset.synthetic", e.to_string());
    }
    let meta = cfg.dataset.meta();

    let p = &cfg.partition;
    let fractions = [
        ("target_train", p.fractions.target_train),
        ("target_test", p.fractions.target_test),
        ("shadow_train", p.fractions.shadow_train),
        ("shadow_test", p.fractions.shadow_test),
    ];
    for (name, f) in fractions {
        if f.is_nan() || f < 0.0 {
            push(&format!("partition.fractions.{name}"), format!("{f} is negative"));
        }
    }
    let sum: f64 = fractions.iter().map(|f| f.1).sum();
    if sum > 1.0 + 1e-9 {
        push("partition.fractions", format!("fractions sum to {sum}, must not exceed 1"));
    }
    if !(0.0..=1.0).contains(&p.partial_fraction) {
        push("partition.partial_fraction", format!("{} outside [0,1]", p.partial_fraction));
    }
    let proportions = [("partition.target_train_proportion", &p.target_train_proportion), ("partition.shadow_train_proportion", &p.shadow_train_proportion)];
    for (field, prop) in proportions {
        if prop.len() != meta.num_properties {
            push(field, format!("{} entries, dataset has {} property values", prop.len(), meta.num_properties));
        }
    }
    for (i, prop) in p.query_proportions.iter().chain(&cfg.fleet.labels).enumerate() {
        if prop.len() != meta.num_properties {
            push("proportions", format!("#{i} {} has {} entries, dataset has {} property values", prop.label(), prop.len(), meta.num_properties));
        }
    }

    if let Err(e) = cfg.target.validate() {
        push("target", e.to_string());
    }

    let f = &cfg.fleet;
    if !f.labels.is_empty() {
        if f.labels.len() < 2 {
            push("fleet.labels", "property inference needs at least 2 labels".into());
        }
        if f.per_label == 0 || f.train_size == 0 || f.query_set_size == 0 {
            push("fleet", "per_label, train_size and query_set_size must be >= 1".into());
        }
    }

    let a = &cfg.attacks;
    for s in &a.meminf_settings {
        if MemInfSetting::parse(s).is_none() {
            let names: Vec<&str> = MemInfSetting::ALL.iter().map(|s| s.name()).collect();
            push("attacks.meminf_settings", format!("unknown setting {s:?}; allowed: {}", names.join(", ")));
        }
    }
    if a.meminf.lira_models < 4 || a.meminf.lira_models % 2 == 1 {
        push("attacks.meminf.lira_models", format!("{} must be even and >= 4", a.meminf.lira_models));
    }
    if a.meminf.attack.epochs == 0 || a.meminf.attack.batch_size == 0 {
        push("attacks.meminf.attack", "epochs and batch_size must be >= 1".into());
    }
    if [a.adv.pgd.epsilon, a.adv.square.epsilon].iter().any(|e| e.is_nan() || *e < 0.0) {
        push("attacks.adv", "epsilon must be >= 0".into());
    }

    for (i, name) in cfg.compositions.iter().enumerate() {
        match CompositionPlan::parse(name) {
            Err(e) => push(&format!("compositions[{i}]"), e.to_string()),
            Ok(plan) => {
                let uses_propinf = plan.support_attack == AttackKind::PropInf || plan.via.is_some() || plan.primary_attack == AttackKind::PropInf;
                if uses_propinf && f.labels.len() < 2 {
                    push(&format!("compositions[{i}]"), format!("{name} needs fleet.labels with at least 2 proportions"));
                }
                if plan.primary_attack == AttackKind::MemInf && a.meminf_settings.is_empty() {
                    push(&format!("compositions[{i}]"), format!("{name} needs at least one attacks.meminf_settings entry"));
                }
            }
        }
    }

    for t in &cfg.metrics.fpr_targets {
        if !(*t > 0.0 && *t < 1.0) {
            push("metrics.fpr_targets", format!("{t} outside (0,1)"));
        }
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = validate_config("seed = 3\n").unwrap();
        let text = cfg.canonical();
        let again = validate_config(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), text);
    }

    #[test]
    fn every_violation_is_reported() {
        let raw = r#"
seed = 1
compositions = ["meminf_to_adv"]
[partition.fractions]
target_train = 0.3
target_test = 0.3
shadow_train = 0.3
shadow_test = 0.3
[attacks.meminf]
lira_models = 3
"#;
        let errs = validate_config(raw).unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs[0].starts_with("partition.fractions:") && errs[0].contains("1.2"), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("adv_to_meminf")), "allowed set is cited: {errs:?}");
    }

    #[test]
    fn stage_seeds_are_independent_of_order() {
        let cfg = validate_config("seed = 9\n").unwrap();
        assert_eq!(cfg.stage_seed("train", 0), derive_seed(9, "train", 0));
        assert_ne!(cfg.stage_seed("train", 0), cfg.stage_seed("attack", 0));
    }

    #[test]
    fn propinf_plans_need_a_fleet() {
        let errs = validate_config("seed = 1\ncompositions = [\"propinf_to_meminf\"]\n").unwrap_err();
        assert!(errs[0].contains("fleet.labels"), "{errs:?}");
    }
}
