use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn pcluster(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pcluster"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn manifest_digests_match_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pcluster(&["--output-dir", out, "--seed", "5", "energies", "--photons", "4,6"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "energies");
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = fs::read(dir.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), hex);
    }
}

#[test]
fn same_seed_gives_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = pcluster(
            &["--output-dir", d.path().to_str().unwrap(), "--seed", "11", "measure", "--n", "2"],
            &[("PCLUSTER_DETECTION__SHOTS", "2000")],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ma = fs::read(a.path().join("moments.json")).unwrap();
    let mb = fs::read(b.path().join("moments.json")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn unknown_config_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[protocol]\nbogus = 3\n").unwrap();
    let o = pcluster(&["--config", cfg.to_str().unwrap(), "simulate"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn invalid_values_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pcluster(&["--output-dir", out, "simulate", "--method", "magic"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = pcluster(&["--output-dir", out, "simulate"], &[("PCLUSTER_PROTOCOL__N", "0")]);
    assert_eq!(o.status.code(), Some(2));
    let o = pcluster(&["--output-dir", out, "processtomo", "--process", "p3"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn env_override_reaches_the_recorded_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pcluster(
        &["--output-dir", out, "simulate", "--noise", "ideal"],
        &[("PCLUSTER_PROTOCOL__N", "3"), ("PCLUSTER_SEED", "77")],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["config"]["protocol"]["n"], 3);
    assert_eq!(manifest["config"]["seed"], 77);
}

#[test]
fn ideal_entanglement_is_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pcluster(&["--output-dir", out, "entanglement", "--n", "3", "--noise", "ideal"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let le = read_json(&dir.path().join("le.json"));
    let v = le["mean"].as_f64().unwrap();
    assert!((v - 0.5).abs() < 1e-9, "{le}");
}

#[test]
fn processtomo_then_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for p in ["p1", "p2"] {
        let file = format!("{p}.json");
        let o = pcluster(
            &["--output-dir", out, "processtomo", "--process", p, "--noise", "ideal", "--out", &file],
            &[],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let p1 = dir.path().join("p1.json");
    let p2 = dir.path().join("p2.json");
    let o = pcluster(
        &[
            "--output-dir",
            out,
            "chain",
            "--p1",
            p1.to_str().unwrap(),
            "--p2",
            p2.to_str().unwrap(),
            "--n",
            "3",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("mpo.json").exists());
}

#[test]
fn missing_input_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pcluster(&["--output-dir", out, "entanglement", "--mpo", "/nonexistent/mpo.json"], &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nonexistent"));
}
