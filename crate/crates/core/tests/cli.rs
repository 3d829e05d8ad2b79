mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::write_planted_run;

fn audiorec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audiorec"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_report_significance_and_split() {
    let dir = tempfile::tempdir().unwrap();
    write_planted_run(dir.path(), &["knn"], 1);
    let d = dir.path();

    let o = audiorec(&["run", "--config", "run.json", "--out", "cli_out", "--seed", "5"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("KNN"));
    let manifest = std::fs::read_to_string(d.join("cli_out/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 5"));

    let o = audiorec(&["report", "cli_out", "--csv"], d);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("model,variant,k"));
    assert_eq!(stdout(&o).lines().count(), 4);

    let before = std::fs::read_to_string(d.join("cli_out/significance.csv")).unwrap();
    let o = audiorec(&["significance", "cli_out", "--resamples", "500", "--seed", "5"], d);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), before.lines().count());

    let o = audiorec(&["split", "--config", "run.json", "--out", "split_only"], d);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Num Interactions"));
    assert!(d.join("split_only/split/split_report.txt").is_file());
    assert!(!d.join("split_only/runs").exists());
}

#[test]
fn partial_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    write_planted_run(dir.path(), &["knn"], 1);
    std::fs::write(dir.path().join("noise.csv"), "broken").unwrap();
    let o = audiorec(&["run", "--config", "run.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("knn__Noise failed"));
}

#[test]
fn fatal_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = audiorec(&["run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
    let o = audiorec(&["run", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = audiorec(&["report", "."], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pool_writes_pare() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chunks.csv"), "item_id,a,b\nt1,1,2\nt2,0,0\nt1,3,4\n").unwrap();
    let o = audiorec(&["pool", "chunks.csv", "--out", "pooled.pare"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = audiorec::ingest::load_embeddings(dir.path().join("pooled.pare")).unwrap();
    assert_eq!(t.row_by_id("t1").unwrap(), &[2.0, 3.0]);
    assert_eq!(t.row_by_id("t2").unwrap(), &[0.0, 0.0]);
}

#[test]
fn synth_writes_a_runnable_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = audiorec(&["synth", "--out", "demo", "--users", "30", "--items", "600"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = audiorec::config::RunConfig::load(dir.path().join("demo/run.json")).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.variants.len(), 2);
}
