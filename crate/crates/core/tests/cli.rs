//! End-to-end tests of the `layergibbs` binary: exit codes, output files,
//! manifest hashes, config round-trips, and the corrupted-table negative
//! control.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layergibbs"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("layergibbs_cli_{name}_{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_exits_zero_and_unknown_flag_exits_two() {
    let dir = tmp_dir("help");
    let help = run(&["--help"], &dir);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("potential"));

    let bad_flag = run(&["potential", "--no-such-flag"], &dir);
    assert_eq!(bad_flag.status.code(), Some(2));

    let bad_cmd = run(&["frobnicate"], &dir);
    assert_eq!(bad_cmd.status.code(), Some(2));

    let bad_engine = run(&["potential", "--engine", "quantum"], &dir);
    assert_eq!(bad_engine.status.code(), Some(2));
}

#[test]
fn zero_coupling_smoke_run_writes_hashed_outputs() {
    let dir = tmp_dir("smoke");
    let start = std::time::Instant::now();
    let out = run(
        &["potential", "--beta", "0", "--n", "2", "--max-length", "4", "--out-dir", "out"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs() < 10, "smoke run must be fast");

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/manifest.json")).unwrap())
            .unwrap();
    let hash = manifest["manifest_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(manifest["command"], "potential");
    assert_eq!(manifest["config"]["beta"], 0.0);
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|o| o == "potential_table.csv"));

    // Every CSV opens with the manifest hash; every JSON embeds it.
    for name in ["potential_table.csv", "potential_plot.csv"] {
        let text = std::fs::read_to_string(dir.join("out").join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, format!("# manifest {hash}"), "{name}");
    }
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/potential_table.json")).unwrap())
            .unwrap();
    assert_eq!(table["manifest_hash"].as_str().unwrap(), hash);

    // At zero coupling every interval potential vanishes.
    for e in table["data"]["entries"].as_array().unwrap() {
        assert!(e["value"]["value"].as_f64().unwrap().abs() < 1e-12);
    }
}

#[test]
fn verify_passes_clean_and_fails_on_corrupted_table() {
    let dir = tmp_dir("verify");
    let gen = run(
        &["potential", "--beta", "0.4", "--n", "2", "--max-length", "4", "--out-dir", "out"],
        &dir,
    );
    assert_eq!(gen.status.code(), Some(0));

    let clean = run(
        &["verify", "--beta", "0.4", "--n", "2", "--table", "out/potential_table.json"],
        &dir,
    );
    assert_eq!(clean.status.code(), Some(0), "{}", stdout(&clean));
    let text = stdout(&clean);
    for name in [
        "mobius_inversion",
        "telescoping_identity",
        "resummation",
        "partition_identity",
        "variational_gap",
        "table_recompute",
    ] {
        assert!(text.contains(name), "missing check {name} in:\n{text}");
    }
    assert!(!text.contains("FAIL"));

    // Corrupt one off-diagonal entry; verify must fail and name the check.
    let path = dir.join("out/potential_table.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let entries = doc["data"]["entries"].as_array_mut().unwrap();
    let e = entries
        .iter_mut()
        .find(|e| e["j"] != e["k"])
        .expect("an off-diagonal entry exists");
    let v = e["value"]["value"].as_f64().unwrap();
    e["value"]["value"] = serde_json::json!(v + 0.25);
    std::fs::write(dir.join("out/corrupt.json"), doc.to_string()).unwrap();

    let corrupted = run(
        &["verify", "--beta", "0.4", "--n", "2", "--table", "out/corrupt.json"],
        &dir,
    );
    assert_eq!(corrupted.status.code(), Some(1));
    assert!(stdout(&corrupted).contains("FAIL table_recompute"));
}

#[test]
fn config_file_round_trips_and_flags_override() {
    let dir = tmp_dir("config");
    let cfg = serde_json::json!({
        "beta": 0.0,
        "n": 2,
        "max_length": 3,
        "xi": "alternating",
        "out_dir": "from_file"
    });
    std::fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();

    // Config file alone.
    let a = run(&["potential", "--config", "cfg.json"], &dir);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let ma: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("from_file/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(ma["config"]["xi"], "alternating");
    assert_eq!(ma["config"]["max_length"], 3);

    // Flags override individual fields without disturbing the rest.
    let b = run(
        &["potential", "--config", "cfg.json", "--xi", "all-minus", "--out-dir", "flagged"],
        &dir,
    );
    assert_eq!(b.status.code(), Some(0));
    let mb: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("flagged/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(mb["config"]["xi"], "all-minus");
    assert_eq!(mb["config"]["max_length"], 3);

    // The manifest's embedded config parses back to an identical run: feed it
    // in as a new config file and check the resulting manifest agrees.
    std::fs::write(dir.join("echo.json"), mb["config"].to_string()).unwrap();
    let c = run(&["potential", "--config", "echo.json", "--out-dir", "echoed"], &dir);
    assert_eq!(c.status.code(), Some(0));
    let mc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("echoed/manifest.json")).unwrap())
            .unwrap();
    let mut want = mb["config"].clone();
    want["out_dir"] = serde_json::json!("echoed");
    assert_eq!(mc["config"], want);

    // Unknown config keys are a usage error.
    std::fs::write(dir.join("bad.json"), r#"{"betta": 1.0}"#).unwrap();
    let d = run(&["potential", "--config", "bad.json"], &dir);
    assert_eq!(d.status.code(), Some(2));
}

#[test]
fn golden_regen_is_deterministic_and_matches_committed_store() {
    let dir = tmp_dir("golden");
    let a = run(&["golden-regen", "--out", "a.json"], &dir);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&["golden-regen", "--out", "b.json"], &dir);
    assert_eq!(b.status.code(), Some(0));
    let bytes_a = std::fs::read(dir.join("a.json")).unwrap();
    let bytes_b = std::fs::read(dir.join("b.json")).unwrap();
    assert_eq!(bytes_a, bytes_b, "regeneration must be byte-identical");

    let committed =
        std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../golden/values.json"))
            .unwrap();
    assert_eq!(bytes_a, committed, "committed store is stale; rerun golden-regen");
}

#[test]
fn decay_and_probe_and_decimate_smoke() {
    let dir = tmp_dir("subs");
    let decay = run(
        &["decay", "--beta", "0.6", "--n", "3", "--max-length", "6", "--out-dir", "d"],
        &dir,
    );
    assert_eq!(decay.status.code(), Some(0), "{}", stdout(&decay));
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("d/decay_fit.json")).unwrap())
            .unwrap();
    assert!(fit["data"]["fit"]["lambda"].as_f64().unwrap() > 0.0);

    let probe = run(
        &["probe", "--beta", "0", "--ns", "1", "--engine", "exact", "--out-dir", "p"],
        &dir,
    );
    assert_eq!(probe.status.code(), Some(0), "{}", String::from_utf8_lossy(&probe.stderr));
    let csv = std::fs::read_to_string(dir.join("p/probe.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("x,y,y_err,series_label"));

    // Zero coupling: all decimated potentials vanish, scan passes vacuously.
    let dec = run(
        &["decimate", "--beta", "0", "--n", "2", "--b", "2", "--max-length", "4",
          "--out-dir", "dec"],
        &dir,
    );
    assert_eq!(dec.status.code(), Some(0), "{}", stdout(&dec));
    assert!(dir.join("dec/mask_margin.json").exists());
}

#[test]
fn threads_env_var_is_accepted() {
    let dir = tmp_dir("threads");
    let out = bin()
        .args(["potential", "--beta", "0", "--n", "2", "--max-length", "3", "--out-dir", "out"])
        .env("LAYERGIBBS_THREADS", "2")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}
