use std::path::Path;
use std::process::Command;

use csi_mtl_cli::config::{ExperimentConfig, Layout};

const TINY: &str = r#"
seed = 5
modes = ["s2s", "s2m"]
[cell]
samples_per_task = 40
[train]
max_epochs = 2
patience = 1
gate_max_epochs = 2
gate_patience = 1
"#;

fn csi(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_csi-mtl"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), TINY).unwrap();
    dir
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, out, err) = csi(dir, args);
    assert_eq!(code, 0, "{args:?}: {err}");
    out
}

#[test]
fn generate_counts_and_repeats_exactly() {
    let dir = setup();
    let out = ok(dir.path(), &["--config", "c.toml", "--out", "a", "generate"]);
    assert!(out.contains("generated 120 samples in 3 tasks"), "{out}");
    ok(dir.path(), &["--config", "c.toml", "--out", "b", "generate"]);
    for f in ["dataset_ad.csid", "generate.manifest"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let ds = csi_mtl::dataset_io::read_dataset(dir.path().join("a/dataset_ad.csid")).unwrap();
    assert_eq!(ds.header.counts, vec![40, 40, 40]);
    assert!(ds.header.is_angle_delay());
    // A different seed gives different data.
    ok(dir.path(), &["--config", "c.toml", "--out", "c", "--seed", "6", "generate"]);
    assert_ne!(
        std::fs::read(dir.path().join("a/dataset_ad.csid")).unwrap(),
        std::fs::read(dir.path().join("c/dataset_ad.csid")).unwrap()
    );
}

#[test]
fn spatial_frequency_dataset_is_optional() {
    let dir = setup();
    // Top-level keys precede the tables.
    let text = format!("save_spatial_frequency = true\n{TINY}");
    std::fs::write(dir.path().join("c.toml"), text).unwrap();
    ok(dir.path(), &["--config", "c.toml", "--out", "a", "generate"]);
    let ds = csi_mtl::dataset_io::read_dataset(dir.path().join("a/dataset_sf.csid")).unwrap();
    assert_eq!((ds.header.rows, ds.header.cols, ds.header.total()), (32, 512, 120));
    assert!(!ds.header.is_angle_delay());
}

#[test]
fn full_round_trip_and_integrity_checks() {
    let dir = setup();
    let d = dir.path();
    let base = ["--config", "c.toml", "--out", "run"];
    let with = |cmd: &str| -> Vec<String> { base.iter().map(|s| s.to_string()).chain([cmd.to_string()]).collect() };

    // Training before generating is an integrity failure.
    assert_eq!(csi(d, &args(&with("train"))).0, 3);
    ok(d, &args(&with("generate")));
    ok(d, &args(&with("analyze")));
    for f in ["profile_hist.csv", "intervals.csv", "corr_csi.csv", "corr_pas.csv", "corr_pdp.csv", "blocks.csv"] {
        assert!(d.join("run/analysis").join(f).exists(), "{f}");
    }
    let corr = std::fs::read_to_string(d.join("run/analysis/corr_pas.csv")).unwrap();
    assert!(corr.lines().next().unwrap().starts_with("task_1,"));
    assert_eq!(corr.lines().count(), 1 + 120);

    ok(d, &args(&with("train")));
    let table = ok(d, &args(&with("eval")));
    assert!(table.contains("s2m") && table.contains("mean"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["modes"].as_array().unwrap().len(), 2);
    assert!(report["modes"][1]["tasks"][0]["accuracy"].is_number());

    // Oracle labels: no GateNet needed, no gap.
    std::fs::remove_file(d.join("run/weights/s2m/gatenet.csiw")).unwrap();
    assert_eq!(csi(d, &args(&with("eval"))).0, 3, "deleted weights fail the manifest check");
    let oracle: Vec<String> = with("eval").into_iter().chain(["--oracle-labels".to_string()]).collect();
    assert_eq!(csi(d, &args(&oracle)).0, 3);
    ok(d, &args(&with("train")));
    ok(d, &args(&oracle));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["oracle_labels"], true);
    assert!(report["modes"][1]["tasks"][0]["accuracy"].is_null());

    ok(d, &args(&with("embed")));
    let embed = std::fs::read_to_string(d.join("run/embed_s2m.csv")).unwrap();
    assert_eq!(embed.lines().next().unwrap(), "x,y,task_id");
    assert_eq!(embed.lines().count(), 1 + 3 * 2);

    // Tampered weights.
    let w = d.join("run/weights/s2s/decoder_1.csiw");
    let mut bytes = std::fs::read(&w).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&w, bytes).unwrap();
    let (code, _, err) = csi(d, &args(&with("eval")));
    assert_eq!(code, 3, "{err}");
    ok(d, &args(&with("train")));

    // A different architecture in the config is refused.
    let mut cfg = ExperimentConfig::load(&d.join("c.toml")).unwrap();
    cfg.arch.cr = csi_mtl::models::Ratio::new(1, 8);
    std::fs::write(d.join("other.toml"), cfg.to_toml()).unwrap();
    let (code, _, err) = csi(d, &["--config", "other.toml", "--out", "run", "eval"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("cr=1/8"), "{err}");

    // Changing the data settings makes the dataset stale.
    let (code, _, err) = csi(d, &["--config", "c.toml", "--out", "run", "--seed", "8", "eval"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn lock_blocks_concurrent_writers() {
    let dir = setup();
    std::fs::create_dir(dir.path().join("run")).unwrap();
    std::fs::write(dir.path().join("run/.csi-mtl.lock"), "1").unwrap();
    let (code, _, err) = csi(dir.path(), &["--config", "c.toml", "--out", "run", "complexity"]);
    assert_eq!(code, 1);
    assert!(err.contains("locked"), "{err}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "n_c = 0\n").unwrap();
    assert_eq!(csi(dir.path(), &["--config", "bad.toml", "generate"]).0, 2);
    std::fs::write(dir.path().join("bad.toml"), "[train]\nlr = -1.0\n").unwrap();
    assert_eq!(csi(dir.path(), &["--config", "bad.toml", "generate"]).0, 2);
    std::fs::write(dir.path().join("bad.toml"), "[cell]\nlayout = \"desk\"\nsamples_per_task = 10\nextra = 1\n").unwrap();
    let (code, _, err) = csi(dir.path(), &["--config", "bad.toml", "generate"]);
    assert_eq!(code, 2);
    assert!(err.contains("extra"), "{err}");
}

#[test]
fn complexity_table_covers_families_and_ratios() {
    let dir = setup();
    let out = ok(dir.path(), &["--config", "c.toml", "--out", "run", "complexity"]);
    let csv = std::fs::read_to_string(dir.path().join("run/complexity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 5);
    assert!(csv.contains("CsiNet_16wide,1/64,"));
    assert!(out.contains("s2m"));
}

#[test]
fn defaults_parse_and_full_layout_validates() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["defaults"]);
    let mut cfg = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    cfg.cell.layout = Layout::Full;
    cfg.validate().unwrap();
    assert_eq!(cfg.cell.regions().unwrap().iter().map(|r| r.sample_count).sum::<usize>(), 250_000);
}
