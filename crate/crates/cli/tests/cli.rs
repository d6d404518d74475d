use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::{tempdir, TempDir};

fn codedrift() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_codedrift"));
    c.env_remove("CODEDRIFT_OUT");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn config(dir: &Path, name: &str, kind: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            "kind = \"{kind}\"\nseed = 3\n{extra}\n[dimensions]\nagents = 8\nstates = 4\nhost_symbols = 4\nparasite_symbols = 8\n\
             [ga]\npopulation_size = 30\nmax_generations = 80\nstall_generations = 40\n"
        ),
    )
    .unwrap();
    path
}

/// A small evolved host population on disk.
fn hosts() -> (TempDir, PathBuf) {
    let dir = tempdir().unwrap();
    let cfg = config(dir.path(), "base.toml", "baseline", "");
    let out = dir.path().join("base");
    let o = run(codedrift().args(["evolve", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (dir, out.join("snapshot.json"))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn evolve_lists_written_files() {
    let (dir, snapshot) = hosts();
    let listed = fs::read_dir(snapshot.parent().unwrap()).unwrap().count();
    assert_eq!(listed, 7);
    assert!(dir.path().join("base/manifest.json").exists());
}

#[test]
fn measure_prints_json() {
    let (_dir, snapshot) = hosts();
    let o = run(codedrift().arg("measure").arg("--snapshot").arg(&snapshot));
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let mu = v["mutual_understanding"].as_f64().unwrap();
    assert!((0.0..=2.0 + 1e-9).contains(&mu));
    let o = run(codedrift().args(["measure", "--structure", "--snapshot"]).arg(&snapshot));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["structure"]["components"].is_array());
}

#[test]
fn seeded_attacks_are_byte_identical_and_leave_the_input_alone() {
    let (dir, snapshot) = hosts();
    let before = fs::read(&snapshot).unwrap();
    let cfg = config(dir.path(), "attack.toml", "attack", "");
    let mut outs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        let o = run(codedrift()
            .args(["attack", "--jobs", jobs, "--seed", "11", "--config"])
            .arg(&cfg)
            .arg("--snapshot")
            .arg(&snapshot)
            .arg("--out")
            .arg(&out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(dir_bytes(&out));
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(fs::read(&snapshot).unwrap(), before);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["ga"]["seed"], 11);
}

#[test]
fn validate_reports_broken_snapshots() {
    let (dir, snapshot) = hosts();
    let o = run(codedrift().arg("validate").arg("--snapshot").arg(&snapshot));
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "valid");

    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&snapshot).unwrap()).unwrap();
    v["prior"] = serde_json::json!([0.5, 0.5, 0.5, 0.5]);
    let broken = dir.path().join("broken.json");
    fs::write(&broken, serde_json::to_vec(&v).unwrap()).unwrap();
    let o = run(codedrift().arg("validate").arg("--snapshot").arg(&broken));
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stdout.is_empty());
    let o = run(codedrift().arg("measure").arg("--snapshot").arg(&broken));
    assert!(!o.status.success());
}

#[test]
fn usage_errors_exit_2() {
    let o = run(codedrift().args(["evolve", "--no-such-flag"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run(codedrift().args(["toy", "--jobs", "0"]));
    assert_eq!(o.status.code(), Some(2));
    let dir = tempdir().unwrap();
    let cfg = config(dir.path(), "base.toml", "baseline", "");
    let o = run(codedrift().args(["synonyms", "--config"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
    let bad = config(dir.path(), "bad.toml", "baseline", "colour = 3");
    let o = run(codedrift().args(["evolve", "--config"]).arg(&bad));
    assert_eq!(o.status.code(), Some(2));
    let o = run(codedrift().args(["attack", "--config"]).arg(config(dir.path(), "a.toml", "attack", "")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_exit_1() {
    let o = run(codedrift().args(["measure", "--snapshot", "/nonexistent/snapshot.json"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_directory_falls_back_to_environment() {
    let dir = tempdir().unwrap();
    let o = run(codedrift()
        .arg("toy")
        .current_dir(dir.path())
        .env("CODEDRIFT_OUT", dir.path().join("from_env")));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("from_env/report.json").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("from_env/report.json")).unwrap()).unwrap();
    assert_eq!(report["toy"]["pair_attack_mu"], 0.0);

    let o = run(codedrift().arg("toy").current_dir(dir.path()));
    assert!(o.status.success());
    assert!(dir.path().join("codedrift-out/report.json").exists());
}
