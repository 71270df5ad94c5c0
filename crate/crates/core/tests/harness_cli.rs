use mixkinetics::harness::*;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_mixkinetics"))
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("mixkinetics-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const TINY_MS: &str = r#"{ "grid": { "nx": 16, "nv": 8 }, "ms": { "dt": 0.01, "t_end": 0.5, "record_every": 5 } }"#;

#[test]
fn defaults_and_unknown_fields() {
    let c = ExperimentConfig::from_json("{}").unwrap();
    assert_eq!(c, ExperimentConfig::default());
    assert_eq!(c.grid.nv, 24);
    assert_eq!(c.mixture.masses, vec![1.0, 2.0]);
    assert!(ExperimentConfig::from_json(r#"{ "grid": { "nvv": 3 } }"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{ "extra": 1 }"#).is_err());
}

#[test]
fn hash_ignores_output_section() {
    let a = ExperimentConfig::from_json(TINY_MS).unwrap();
    let mut b = a.clone();
    b.output.root = Some("elsewhere".into());
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a.content_hash().len(), 16);
    let mut c = a.clone();
    c.seed = 1;
    assert_ne!(a.content_hash(), c.content_hash());
}

#[test]
fn output_root_precedence() {
    let mut c = ExperimentConfig::default();
    std::env::remove_var(OUT_ENV);
    assert_eq!(output_root(None, &c), PathBuf::from(DEFAULT_OUT));
    c.output.root = Some("cfg".into());
    assert_eq!(output_root(None, &c), PathBuf::from("cfg"));
    std::env::set_var(OUT_ENV, "env");
    assert_eq!(output_root(None, &c), PathBuf::from("env"));
    assert_eq!(output_root(Some(Path::new("cli")), &c), PathBuf::from("cli"));
    std::env::remove_var(OUT_ENV);
}

#[test]
fn validation_rejects_mismatched_commands() {
    let c = ExperimentConfig::default();
    assert!(c.validate(Command::EpsSweep).is_err());
    let mut d = c.clone();
    d.ms.amplitudes = vec![0.1];
    assert!(d.validate(Command::MsDecay).is_err());
    assert!(c.validate(Command::Spectrum).is_ok());
}

#[test]
fn float_format_round_trips() {
    for v in [0.1, -1.0 / 3.0, 6.02e23, 5e-324] {
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}

#[test]
fn cli_ms_decay_writes_csv_and_manifest() {
    let dir = scratch("ms");
    let cfg = write_config(&dir, TINY_MS);
    let out = bin().args(["ms-decay", "--config"]).arg(&cfg).arg("--out").arg(dir.join("runs")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = String::from_utf8(out.stdout).unwrap().lines().next().unwrap().to_string();
    let csv = std::fs::read_to_string(Path::new(&run).join("ms_decay.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,norm,sum_residual,mean_residual,orthogonality_residual,incompressibility_residual");
    assert_eq!(lines.count(), 11);
    assert!(!csv.contains('\r'));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(Path::new(&run).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "ms-decay");
    assert_eq!(manifest["config"]["grid"]["nx"], 16);
    assert!(run.ends_with(&format!("ms-decay-{}", manifest["config_hash"].as_str().unwrap())));
}

#[test]
fn cli_dry_run_writes_nothing() {
    let dir = scratch("dry");
    let cfg = write_config(&dir, TINY_MS);
    let out = bin().args(["ms-decay", "--dry-run", "--config"]).arg(&cfg).arg("--out").arg(dir.join("runs")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"nx\": 16"));
    assert!(!dir.join("runs").exists());
}

#[test]
fn cli_exit_codes() {
    let dir = scratch("codes");
    let bad = write_config(&dir, r#"{ "grid": { "dim": 5 } }"#);
    let out = bin().args(["spectrum", "--config"]).arg(&bad).arg("--out").arg(dir.join("runs")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = bin().args(["spectrum", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    // Accepted by validation, rejected by the stability check inside the run.
    let unstable = write_config(&dir, r#"{ "grid": { "nx": 64, "nv": 8 }, "ms": { "dt": 1.0, "t_end": 2.0 } }"#);
    let out = bin().args(["ms-decay", "--config"]).arg(&unstable).arg("--out").arg(dir.join("runs")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let runs: Vec<_> = std::fs::read_dir(dir.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run = runs[0].as_ref().unwrap().path();
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["error"].as_str().unwrap().contains("CFL"));
}
