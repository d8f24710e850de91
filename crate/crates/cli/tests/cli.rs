use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use infercomp_cli::{validate_config, StageManifest};

const TINY: &str = r#"
seed = 7
compositions = ["adv_to_meminf", "propinf_to_meminf", "propinf_to_attrinf_empirical", "adv_to_propinf", "chain_adv_propinf_meminf"]

[dataset.synthetic]
n_samples = 600
side = 4

[partition.fractions]
target_train = 0.2
target_test = 0.2
shadow_train = 0.2
shadow_test = 0.2

[target]
architecture = "mlp"
max_epochs = 3
batch_size = 32

[fleet]
labels = [[0.2, 0.8], [0.8, 0.2]]
per_label = 2
train_size = 60
query_set_size = 8

[attacks]
meminf_settings = ["bb_shadow", "wb_partial", "lira_shadow"]

[attacks.meminf]
lira_models = 4

[attacks.meminf.attack]
epochs = 2

[attacks.adv.pgd]
max_iters = 5

[attacks.adv.square]
max_queries = 20

[attacks.attrinf]
epochs = 5

[attacks.propinf]
epochs = 20
"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path
}

fn infercomp(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infercomp"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prepare_alone_writes_only_the_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let o = infercomp(&cfg, &out, &["prepare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("prepare  ran"));
    assert!(out.join("prepare/bundle/manifest.json").exists());
    assert!(!out.join("train").exists());
    let m: StageManifest = serde_json::from_slice(&fs::read(out.join("prepare/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.stage, "prepare");
    assert!(m.outputs.contains_key("bundle/target_train.bin"));
}

#[test]
fn second_run_hits_every_cache_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let first = infercomp(&cfg, &out, &["all"]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(!stdout(&first).contains("models trained: 0"));
    let table = fs::read(out.join("report/table.csv")).unwrap();
    let manifests: Vec<Vec<u8>> = ["prepare", "train", "attack", "compose", "report"]
        .iter()
        .map(|s| fs::read(out.join(s).join("manifest.json")).unwrap())
        .collect();

    let second = infercomp(&cfg, &out, &["all"]);
    assert!(second.status.success());
    let text = stdout(&second);
    assert_eq!(text.matches("cached").count(), 5, "{text}");
    assert!(text.contains("models trained: 0"));
    assert_eq!(fs::read(out.join("report/table.csv")).unwrap(), table);

    // same seed in a fresh directory reproduces every artifact
    let other = tmp.path().join("again");
    assert!(infercomp(&cfg, &other, &["all", "--workers", "1"]).status.success());
    assert_eq!(fs::read(other.join("report/table.csv")).unwrap(), table);
    for (s, m) in ["prepare", "train", "attack", "compose", "report"].iter().zip(&manifests) {
        assert_eq!(&fs::read(other.join(s).join("manifest.json")).unwrap(), m, "{s} manifest differs");
    }

    let rows: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(out.join("report/table.json")).unwrap()).unwrap();
    assert!(rows.iter().any(|r| r["setting"] == "propinf_to_meminf:lira_shadow"));
    assert!(rows.iter().all(|r| ["accuracy", "auc", "f1"].contains(&r["metric"].as_str().unwrap())));
}

#[test]
fn report_change_reruns_only_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    assert!(infercomp(&cfg, &out, &["all"]).status.success());
    let cfg2 = write_config(tmp.path(), &format!("{TINY}\n[metrics]\nreport = [\"auc\"]\n"));
    let o = infercomp(&cfg2, &out, &["all"]);
    let text = stdout(&o);
    assert!(text.contains("compose  cached") && text.contains("report   ran"), "{text}");
    let csv = fs::read_to_string(out.join("report/table.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",auc,")));
}

#[test]
fn compose_without_attack_names_the_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    assert!(infercomp(&cfg, &out, &["all", "--stages", "prepare,train"]).status.success());
    let o = infercomp(&cfg, &out, &["compose"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("attack/manifest.json"), "{}", stderr(&o));
}

#[test]
fn invalid_config_lists_every_error_and_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seed = 1\ncompositions = [\"meminf_to_adv\"]\n[partition.fractions]\ntarget_train = 0.5\ntarget_test = 0.5\nshadow_train = 0.5\n[attacks]\nmeminf_settings = [\"grey_box\"]\n",
    );
    let o = infercomp(&cfg, &tmp.path().join("run"), &["all"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("partition.fractions") && err.contains("meminf_to_adv") && err.contains("grey_box"), "{err}");
    assert!(!tmp.path().join("run").exists());

    let o = infercomp(&cfg, &tmp.path().join("run"), &["all", "--stages", "prepare,bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let missing = infercomp(&tmp.path().join("nope.toml"), &tmp.path().join("run"), &["all"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn check_prints_a_canonical_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = infercomp(&cfg, &tmp.path().join("run"), &["check", "--seed", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let parsed = validate_config(&text).unwrap();
    assert_eq!(parsed.seed, 11);
    assert_eq!(parsed.canonical(), text);
    assert_eq!(parsed.fleet.labels.len(), 2);
}
