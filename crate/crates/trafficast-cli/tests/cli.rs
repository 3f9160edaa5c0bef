//! End-to-end subcommand tests over a tiny synthetic network.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trafficast"))
}

const TINY_CONFIG: &str = r#"
[data]
period = 48
exclude_weekends = true

[synth]
segments_per_archetype = 1
days = 7

[cluster]
resolution = 16
epochs = 1
batches_per_epoch = 2
batch_size = 6
images_per_segment = 4

[series]
stride = 4

[predict]
horizons = [1]
epochs = 1
batch_size = 64

[run]
seed = 11
"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

fn run_ok(args: &[&str], config: &Path, out_dir: &Path) -> Output {
    let output = bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn full_stage_by_stage_run_matches_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let stage_dir = dir.path().join("stages");
    let pipe_dir = dir.path().join("pipe");

    // stage by stage
    run_ok(&["synth"], &config, &stage_dir);
    assert!(stage_dir.join("data.csv").exists());
    assert!(stage_dir.join("labels.csv").exists());
    run_ok(&["similarity"], &config, &stage_dir);
    assert!(stage_dir.join("similarity.csv").exists());
    run_ok(&["acf"], &config, &stage_dir);
    assert!(stage_dir.join("acf.csv").exists());
    run_ok(&["cluster"], &config, &stage_dir);
    assert!(stage_dir.join("clusters.json").exists());
    assert!(stage_dir.join("embeddings.csv").exists());
    run_ok(&["train"], &config, &stage_dir);
    assert!(stage_dir.join("models").read_dir().unwrap().count() > 0);
    run_ok(&["evaluate"], &config, &stage_dir);
    assert!(stage_dir.join("report.json").exists());
    assert!(stage_dir.join("report.csv").exists());
    assert!(stage_dir.join("predictions.csv").exists());

    // one-shot pipeline with the same config and seed
    run_ok(&["pipeline"], &config, &pipe_dir);

    let stage_report = std::fs::read(stage_dir.join("report.json")).unwrap();
    let pipe_report = std::fs::read(pipe_dir.join("report.json")).unwrap();
    assert_eq!(
        stage_report, pipe_report,
        "pipeline output must equal the composition of its stages"
    );

    // model checkpoints byte-identical too
    let stage_gm = std::fs::read(stage_dir.join("models/gm_h1_g0.ckpt")).unwrap();
    let pipe_gm = std::fs::read(pipe_dir.join("models/gm_h1_g0.ckpt")).unwrap();
    assert_eq!(stage_gm, pipe_gm);
}

#[test]
fn select_interval_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut config_text = TINY_CONFIG.replace("stride = 4", "stride = 0");
    config_text.push_str("\n");
    let config = dir.path().join("config.toml");
    std::fs::write(&config, config_text).unwrap();
    let out_dir = dir.path().join("out");
    run_ok(&["synth"], &config, &out_dir);
    let output = run_ok(&["select-interval"], &config, &out_dir);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("lag"), "missing table header: {stdout}");
    assert!(
        stdout.contains("selected input interval l = "),
        "missing selection line: {stdout}"
    );
    assert!(out_dir.join("interval.json").exists());
}

#[test]
fn rasterize_writes_pgms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(&["synth"], &config, &out_dir);
    run_ok(&["rasterize", "--resolution", "24"], &config, &out_dir);
    let rasters: Vec<_> = out_dir.join("rasters").read_dir().unwrap().collect();
    // 3 segments x 5 weekdays
    assert_eq!(rasters.len(), 15);
    let any = rasters[0].as_ref().unwrap().path();
    let bytes = std::fs::read(any).unwrap();
    assert!(bytes.starts_with(b"P5\n24 24\n255\n"));
}

#[test]
fn ingest_cleans_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(&["synth"], &config, &out_dir);
    let output = run_ok(&["ingest"], &config, &out_dir);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("seg000"));
    assert!(out_dir.join("cleaned.csv").exists());
}

#[test]
fn invalid_config_exits_one_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[cluster]\nlearning_rate = -0.5\n").unwrap();
    let output = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("cluster.learning_rate"),
        "stderr must name the field: {stderr}"
    );
}

#[test]
fn unknown_subcommand_exits_one() {
    let output = bin().arg("frobnicate").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn missing_artifacts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("emptydir");
    // evaluate without any prior stage: runtime error
    let output = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn env_override_changes_manifest_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let output = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out_dir)
        .env("TRAFFICAST_RUN_SEED", "777")
        .output()
        .unwrap();
    assert!(output.status.success());
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 777"), "{manifest}");
}

#[test]
fn report_subcommand_reemits_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(&["pipeline"], &config, &out_dir);
    let csv_before = std::fs::read(out_dir.join("report.csv")).unwrap();
    std::fs::remove_file(out_dir.join("report.csv")).unwrap();
    run_ok(&["report"], &config, &out_dir);
    let csv_after = std::fs::read(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv_before, csv_after);
}
