//! Stages run in a fixed order and exchange data only through files under
//! `out/<stage>/`. Each stage records a manifest with the hash of its inputs
//! and is skipped when that hash is unchanged and its outputs are intact.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use infercomp_core::attacks::meminf::{meminf_attack, prepare_meminf};
use infercomp_core::attacks::{adv_l2_profile, attrinf_attack, propinf_attack, AdvMode, AttackResult, MemInfConfig, MemInfSetting, PropInfOutput};
use infercomp_core::compose::{
    adv_to_meminf, adv_to_propinf, chain_adv_propinf_attrinf, chain_adv_propinf_meminf, propinf_to_attrinf, propinf_to_meminf, AttackKind,
    Level, Mode,
};
use infercomp_core::data::{generate, load_bundle, load_csv, partition_dataset, save_bundle, DatasetBundle, Sample};
use infercomp_core::models::{load_checkpoint, load_fleet, save_checkpoint, save_fleet, train_model, train_shadow_fleet, FleetMember};
use infercomp_core::seed::{content_hash, json_hash};
use infercomp_core::{CompositionPlan, CompositionRun, ModelConfig, TrainedModel};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, PropInfAdv};
use crate::error::{CliError, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Prepare,
    Train,
    Attack,
    Compose,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Prepare, Stage::Train, Stage::Attack, Stage::Compose, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Compose => "compose",
            Stage::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Prepare => &[],
            Stage::Train => &[Stage::Prepare],
            Stage::Attack => &[Stage::Prepare, Stage::Train],
            Stage::Compose => &[Stage::Prepare, Stage::Train, Stage::Attack],
            Stage::Report => &[Stage::Compose],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub schema: u32,
    pub stage: String,
    pub seed: u64,
    pub input_hash: String,
    /// Upstream stage -> hash of its manifest file.
    pub upstream: BTreeMap<String, String>,
    /// Path relative to the stage directory -> sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Cached,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub stages: Vec<(Stage, StageStatus)>,
    /// Target, shadow and fleet models trained in this invocation.
    pub models_trained: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (stage, status) in &self.stages {
            writeln!(f, "{:<8} {}", stage.name(), if *status == StageStatus::Ran { "ran" } else { "cached" })?;
        }
        write!(f, "models trained: {}", self.models_trained)
    }
}

/// Run `stages` (in pipeline order, duplicates ignored) under `cfg.out`.
pub fn run_stages(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<Summary> {
    let mut order = stages.to_vec();
    order.sort();
    order.dedup();
    let mut summary = Summary::default();
    for stage in order {
        let status = Runner { cfg, out: &cfg.out, stage }.run(&mut summary.models_trained)?;
        summary.stages.push((stage, status));
    }
    Ok(summary)
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    stage: Stage,
}

fn manifest_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(stage.name()).join("manifest.json")
}

fn relative(out: &Path, path: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).display().to_string()
}

fn require(out: &Path, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingUpstream(relative(out, &path)))
    }
}

/// Every file under `dir` except the manifest, keyed by relative path.
fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path != root.join("manifest.json") {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.insert(rel, content_hash(&fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

impl Runner<'_> {
    fn dir(&self) -> PathBuf {
        self.out.join(self.stage.name())
    }

    fn seed(&self) -> u64 {
        self.cfg.stage_seed(self.stage.name(), 0)
    }

    /// Config sections this stage reads; upstream stages cover the rest.
    fn inputs(&self) -> serde_json::Value {
        let c = self.cfg;
        match self.stage {
            Stage::Prepare => json!({ "seed": c.seed, "dataset": c.dataset, "partition": c.effective_partition() }),
            Stage::Train => json!({ "seed": c.seed, "target": c.target, "fleet": c.needs_fleet().then_some(&c.fleet) }),
            Stage::Attack => json!({ "seed": c.seed, "attacks": c.attacks }),
            Stage::Compose => json!({ "seed": c.seed, "compositions": c.compositions, "attacks": c.attacks }),
            Stage::Report => json!({ "metrics": c.metrics }),
        }
    }

    fn run(&self, models_trained: &mut usize) -> Result<StageStatus> {
        let mut upstream = BTreeMap::new();
        for &up in self.stage.upstream() {
            let path = require(self.out, manifest_path(self.out, up))?;
            upstream.insert(up.name().to_string(), content_hash(&fs::read(path)?));
        }
        let input_hash = json_hash(&json!({ "stage": self.stage.name(), "config": self.inputs(), "upstream": upstream }));
        let dir = self.dir();
        if self.is_cached(&input_hash)? {
            return Ok(StageStatus::Cached);
        }
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        *models_trained += match self.stage {
            Stage::Prepare => self.prepare()?,
            Stage::Train => self.train()?,
            Stage::Attack => self.attack()?,
            Stage::Compose => self.compose()?,
            Stage::Report => self.report()?,
        };
        let manifest = StageManifest {
            schema: MANIFEST_SCHEMA,
            stage: self.stage.name().into(),
            seed: self.seed(),
            input_hash,
            upstream,
            outputs: hash_outputs(&dir)?,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(StageStatus::Ran)
    }

    fn is_cached(&self, input_hash: &str) -> Result<bool> {
        let Ok(bytes) = fs::read(manifest_path(self.out, self.stage)) else { return Ok(false) };
        let Ok(m) = serde_json::from_slice::<StageManifest>(&bytes) else { return Ok(false) };
        Ok(m.schema == MANIFEST_SCHEMA && m.input_hash == input_hash && hash_outputs(&self.dir())? == m.outputs)
    }

    fn bundle(&self) -> Result<DatasetBundle> {
        Ok(load_bundle(&require(self.out, self.out.join("prepare/bundle/manifest.json"))?.with_file_name(""))?)
    }

    fn target(&self) -> Result<TrainedModel> {
        Ok(load_checkpoint(&require(self.out, self.out.join("train/target/manifest.json"))?.with_file_name(""))?)
    }

    fn fleet(&self) -> Result<Vec<FleetMember>> {
        Ok(load_fleet(&require(self.out, self.out.join("train/fleet/fleet.json"))?.with_file_name(""))?)
    }

    fn inferred(&self) -> Result<PropInfOutput> {
        let path = require(self.out, self.out.join("attack/propinf.json"))?;
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn meminf_config(&self, setting: MemInfSetting) -> MemInfConfig {
        let mut c = self.cfg.attacks.meminf.clone();
        // shared by the attack and compose stages so origins agree
        c.seed = self.cfg.stage_seed("meminf", setting as u64);
        c.attack.seed = c.seed;
        c
    }

    fn propinf_mode(&self) -> AdvMode {
        let adv = &self.cfg.attacks.adv;
        match self.cfg.attacks.propinf_adv {
            PropInfAdv::Pgd => AdvMode::Pgd(adv.pgd),
            PropInfAdv::Square => AdvMode::Square(adv.square),
        }
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        fs::write(self.dir().join(name), serde_json::to_vec_pretty(value)?)?;
        Ok(())
    }

    fn prepare(&self) -> Result<usize> {
        let ds = &self.cfg.dataset;
        let (meta, samples) = match &ds.csv {
            Some(c) => (c.meta, load_csv(&c.path, c.meta)?),
            None => generate(&ds.synthetic, self.cfg.stage_seed("dataset", 0))?,
        };
        let bundle = partition_dataset(&samples, meta, &self.cfg.effective_partition(), self.seed())?;
        save_bundle(&bundle, &self.dir().join("bundle"))?;
        Ok(0)
    }

    fn train(&self) -> Result<usize> {
        let b = self.bundle()?;
        let config = ModelConfig { seed: self.seed(), ..self.cfg.target.clone() };
        let target = train_model(&config, b.meta, &b.target_train, &b.target_test)?;
        save_checkpoint(&target, &self.dir().join("target"))?;
        let mut trained = 1;
        let mut summary = json!({
            "target": { "epochs": target.training_log.len(), "train_acc": target.final_train_acc, "test_acc": target.final_test_acc }
        });
        if self.cfg.needs_fleet() {
            let f = &self.cfg.fleet;
            let pool: Vec<Sample> = b.shadow_train.iter().chain(&b.reserve).cloned().collect();
            let config = ModelConfig { seed: self.cfg.stage_seed("train", 1), ..self.cfg.target.clone() };
            let fleet = train_shadow_fleet(&config, b.meta, &pool, &b.shadow_test, &f.labels, f.per_label, f.train_size, self.cfg.stage_seed("fleet", 0))?;
            save_fleet(&fleet, &self.dir().join("fleet"))?;
            trained += fleet.len();
            summary["fleet_size"] = json!(fleet.len());
        }
        self.write_json("summary.json", &summary)?;
        Ok(trained)
    }

    fn attack(&self) -> Result<usize> {
        let b = self.bundle()?;
        let target = self.target()?;
        let mut trained = 0;
        for setting in self.cfg.attacks.settings() {
            let out = meminf_attack(&target, &b, setting, None, &self.meminf_config(setting))?;
            trained += shadow_models(setting, &self.cfg.attacks.meminf);
            out.result.write_json(&self.dir().join(format!("meminf_{}.json", setting.name())))?;
        }
        let profile = adv_l2_profile(&target, &b.target_test, &AdvMode::Pgd(self.cfg.attacks.adv.pgd), self.seed());
        let n = profile.len().max(1) as f64;
        self.write_json(
            "adv.json",
            &json!({
                "samples": profile.len(),
                "flip_rate": profile.iter().filter(|r| r.flipped).count() as f64 / n,
                "mean_l2": profile.iter().map(|r| r.l2_distance).sum::<f64>() / n,
            }),
        )?;
        if !b.shadow_train.is_empty() && !b.target_test.is_empty() {
            let config = self.cfg.attacks.attrinf.clone();
            attrinf_attack(&target, b.meta.num_attributes, &b.shadow_train, &b.target_test, &config)?.write_json(&self.dir().join("attrinf.json"))?;
        }
        if self.cfg.needs_fleet() {
            let fleet = self.fleet()?;
            let mut config = self.cfg.attacks.propinf.clone();
            config.seed = self.seed();
            let (out, _) = propinf_attack(&target, &fleet, &b.query_aux, None, &config)?;
            self.write_json("propinf.json", &out)?;
        }
        Ok(trained)
    }

    fn compose(&self) -> Result<usize> {
        let b = self.bundle()?;
        let target = self.target()?;
        let plans = self.cfg.plans();
        let uses_propinf = |p: &CompositionPlan| p.support_attack == AttackKind::PropInf || p.primary_attack == AttackKind::PropInf || p.via.is_some();
        let (fleet, inferred) = if plans.iter().any(uses_propinf) { (self.fleet()?, Some(self.inferred()?)) } else { (Vec::new(), None) };
        let dataset = self.cfg.dataset.name();
        let model = format!("{:?}", target.architecture()).to_lowercase();
        let attacks = &self.cfg.attacks;
        let mut pcfg = attacks.propinf.clone();
        pcfg.seed = self.cfg.stage_seed("attack", 0);
        let mut trained = 0;
        for plan in plans {
            let index = CompositionPlan::allowed().iter().position(|p| *p == plan).unwrap_or(0);
            let seed = self.cfg.stage_seed("compose", index as u64);
            let new_run = |setting: &str| CompositionRun::new(plan, &format!("{plan}:{setting}"), &dataset, &model, seed);
            let mut runs = Vec::new();
            match (plan.level, plan.primary_attack, plan.via) {
                (Level::Preparation, AttackKind::AttrInf, via) => {
                    let inferred = inferred.as_ref().expect("loaded for propinf plans");
                    let mode = plan.mode.unwrap_or(Mode::Empirical);
                    let (out, fed) = if via.is_some() {
                        let c = chain_adv_propinf_attrinf(&target, &fleet, &b.query_aux, &self.propinf_mode(), &pcfg, &b.shadow_train, &b.target_test, &attacks.attrinf, seed)?;
                        (c.downstream, c.fed_confidence)
                    } else {
                        let meta = target.meta;
                        let out = propinf_to_attrinf(&target, meta.num_attributes, meta.num_properties, inferred, &b.shadow_train, mode, &b.target_test, &attacks.attrinf, seed)?;
                        (out, inferred.confidence)
                    };
                    let mut run = new_run("attrinf");
                    run.origin = out.origin.metrics.clone();
                    run.composition = out.composition.metrics.clone();
                    run.diagnostics.insert("propinf_confidence".into(), fed);
                    run.diagnostics.insert("resampled".into(), out.resampled.len() as f64);
                    run.artifacts.insert("origin_aux".into(), out.origin_aux_hash.clone());
                    run.artifacts.insert("composition_aux".into(), out.composition_aux_hash.clone());
                    run.artifacts.insert("attack_config".into(), out.config_hash.clone());
                    runs.push(run);
                }
                (Level::Execution, AttackKind::MemInf, _) => {
                    for setting in attacks.settings() {
                        let out = adv_to_meminf(&target, &b, setting, &attacks.adv, &self.meminf_config(setting))?;
                        trained += shadow_models(setting, &attacks.meminf);
                        let mut run = new_run(setting.name());
                        run.origin = out.origin.result.metrics.clone();
                        run.composition = out.composition.result.metrics.clone();
                        run.diagnostics = out.diagnostics.clone();
                        run.artifacts = out.artifacts.clone();
                        runs.push(run);
                    }
                }
                (Level::Execution, AttackKind::PropInf, _) => {
                    let out = adv_to_propinf(&target, &fleet, &b.query_aux, &self.propinf_mode(), &pcfg)?;
                    let truth = &b.spec.target_train_proportion;
                    let score = |o: &PropInfOutput| {
                        BTreeMap::from([("accuracy".to_string(), f64::from(u8::from(&o.predicted == truth))), ("confidence".to_string(), o.confidence)])
                    };
                    let mut run = new_run("propinf");
                    run.origin = score(&out.origin);
                    run.composition = score(&out.composition);
                    runs.push(run);
                }
                (Level::Evaluation, AttackKind::MemInf, via) => {
                    let inferred = inferred.as_ref().expect("loaded for propinf plans");
                    for setting in attacks.settings() {
                        let config = self.meminf_config(setting);
                        let ctx = prepare_meminf(&target, &b, setting, &config)?;
                        trained += shadow_models(setting, &attacks.meminf);
                        let (out, fed) = if via.is_some() {
                            let c = chain_adv_propinf_meminf(&ctx, &fleet, &b.query_aux, &self.propinf_mode(), &pcfg, &config)?;
                            (c.downstream, c.fed_confidence)
                        } else {
                            (propinf_to_meminf(&ctx, Some(inferred), &config)?, inferred.confidence)
                        };
                        let mut run = new_run(setting.name());
                        run.origin = out.origin.result.metrics.clone();
                        run.composition = out.result.metrics.clone();
                        run.diagnostics.insert("propinf_confidence".into(), fed);
                        run.diagnostics.insert("mean_term".into(), out.mean_term());
                        run.artifacts.insert("split".into(), ctx.split.hash());
                        runs.push(run);
                    }
                }
                _ => unreachable!("validated plan {plan}"),
            }
            for run in runs {
                let file = run.setting.replace(':', "__");
                run.write(&self.dir().join(format!("{file}.json")))?;
            }
        }
        Ok(trained)
    }

    fn report(&self) -> Result<usize> {
        let dir = require(self.out, self.out.join("compose"))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != "manifest.json"));
        files.sort();
        let runs = files.iter().map(|p| CompositionRun::read(p)).collect::<infercomp_core::Result<Vec<_>>>()?;
        let keep = &self.cfg.metrics.report;
        let mut rows = infercomp_core::analysis::comparison_table(&runs)?;
        if !keep.is_empty() {
            rows.retain(|r| keep.contains(&r.metric));
        }
        fs::write(self.dir().join("table.csv"), infercomp_core::analysis::table_csv(&rows)?)?;
        fs::write(self.dir().join("table.json"), infercomp_core::analysis::table_json(&rows)?)?;
        Ok(0)
    }
}

fn shadow_models(setting: MemInfSetting, config: &MemInfConfig) -> usize {
    match setting {
        MemInfSetting::BbShadow | MemInfSetting::WbShadow => 1,
        MemInfSetting::LiraShadow => config.lira_models,
        _ => 0,
    }
}

/// Results of a finished attack stage, for tests and tooling.
pub fn read_attack_result(out: &Path, setting: MemInfSetting) -> Result<AttackResult> {
    let path = require(out, out.join(format!("attack/meminf_{}.json", setting.name())))?;
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
