use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cctmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cctmpc")).args(args).output().expect("binary runs")
}

fn run(config: &Path, out: &Path, command: &str) -> Output {
    cctmpc(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), command])
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a copy of the scalar config with `edit` applied; returns its path.
fn scalar_variant(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg = read_json(&configs().join("scalar.json"));
    cfg["system"] = Value::String(configs().join("scalar.system.json").to_string_lossy().into_owned());
    edit(&mut cfg);
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn every_command_succeeds_on_the_scalar_system() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("scalar.json");
    for (command, files) in [
        ("synth-template", &["template.json", "trace.json"][..]),
        ("compute-rci", &["rci.json", "template.json"][..]),
        ("run-mpc", &["summary.json", "traj_c0_full_s0_seed1.csv"][..]),
        ("compare-schemes", &["comparison.json"][..]),
    ] {
        let out = tmp.path().join(command);
        let o = run(&cfg, &out, command);
        assert_eq!(code(&o), 0, "{command}: {}", String::from_utf8_lossy(&o.stderr));
        for f in files.iter().chain(&["metadata.json"]) {
            assert!(out.join(f).is_file(), "{command} did not write {f}");
        }
        let meta = read_json(&out.join("metadata.json"));
        assert_eq!(meta["command"], command);
        assert_eq!(meta["exit_code"], 0);
    }
}

#[test]
fn outputs_carry_envelope_and_csv_header() {
    let tmp = TempDir::new().unwrap();
    let o = run(&configs().join("scalar.json"), tmp.path(), "run-mpc");
    assert_eq!(code(&o), 0);
    let summary = read_json(&tmp.path().join("summary.json"));
    assert_eq!(summary["kind"], "run_summary");
    assert_eq!(summary["seed"], 1);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    let csv = fs::read_to_string(tmp.path().join("traj_c0_full_s0_seed1.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "k,x0,u0,L,dist,status");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("scalar.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for command in ["compute-rci", "run-mpc", "compare-schemes"] {
        assert_eq!(code(&run(&cfg, &a, command)), 0);
        assert_eq!(code(&run(&cfg, &b, command)), 0);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 5);
    for name in names.iter().filter(|n| *n != "metadata.json") {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn seed_override_changes_realizations() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("scalar.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&cfg, &a, "run-mpc")), 0);
    let o = cctmpc(&["--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99", "run-mpc"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&b.join("summary.json"))["seed"], 99);
    assert!(b.join("traj_c0_full_s0_seed99.csv").is_file());
}

#[test]
fn infeasible_system_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let o = run(&configs().join("infeasible.json"), tmp.path(), "synth-template");
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&tmp.path().join("metadata.json"))["exit_code"], 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&cctmpc(&["run-mpc"])), 1);
    assert_eq!(code(&cctmpc(&["--config", "x.json", "no-such-command"])), 1);
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run(&tmp.path().join("missing.json"), tmp.path(), "run-mpc")), 1);
}

#[test]
fn compare_schemes_needs_two_controllers() {
    let tmp = TempDir::new().unwrap();
    let cfg = scalar_variant(tmp.path(), |c| {
        c["controllers"].as_array_mut().unwrap().truncate(1);
    });
    let o = run(&cfg, &tmp.path().join("out"), "compare-schemes");
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("two controllers"));
}

#[test]
fn schema_violations_are_rejected() {
    let cases: [(&str, Box<dyn Fn(&mut Value)>); 4] = [
        ("schema", Box::new(|c| c["schema"] = "cc-tube-mpc/2".into())),
        ("unknown field", Box::new(|c| c["extra"] = 1.into())),
        ("gamma", Box::new(|c| c["controllers"][0]["gamma"] = 1.5.into())),
        ("missing system", Box::new(|c| c["system"] = "nope.json".into())),
    ];
    for (label, edit) in cases {
        let tmp = TempDir::new().unwrap();
        let cfg = scalar_variant(tmp.path(), edit);
        let o = run(&cfg, &tmp.path().join("out"), "compute-rci");
        assert_eq!(code(&o), 1, "{label}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!tmp.path().join("out/rci.json").exists(), "{label}");
    }
}
