//! End-to-end behaviour of the `vacts-kit` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vacts-kit"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_digests(dir: &Path) {
    let m = manifest(dir);
    for o in m["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(dir.join(o["path"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn check_passes_on_table1() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("table1.sys");
    let o = run(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("jacobian_finite_difference"));
    assert!(!stdout.contains("FAIL"));
    let m = manifest(out.path());
    assert_eq!(m["status"], "ok");
    let config_bytes = std::fs::read(&cfg).unwrap();
    assert_eq!(
        m["config"]["sha256"].as_str().unwrap(),
        hex::encode(Sha256::digest(&config_bytes))
    );
    assert_digests(out.path());
}

#[test]
fn degenerate_and_corrupted_configs() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("table1.sys")).unwrap();
    let pole = dir.path().join("pole.sys");
    let degenerate = text.replace("inclinations = \"[30, 30, 30] deg\"", "inclinations = \"[0, 30, 30] deg\"");
    assert_ne!(degenerate, text, "fixture must contain the nominal inclinations");
    std::fs::write(&pole, degenerate).unwrap();
    let o = run(&[
        "check",
        "--config",
        pole.to_str().unwrap(),
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));

    let broken = dir.path().join("broken.sys");
    std::fs::write(&broken, &text[..text.len() / 2]).unwrap();
    let o = run(&[
        "check",
        "--config",
        broken.to_str().unwrap(),
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse error"));

    let o = run(&["check", "--config", dir.path().join("missing.sys").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sweep_writes_csv_json_and_trends() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("table1.sys");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "inclination",
        "--range",
        "10:80:15",
        "--metric",
        "manipulability",
        "--variant",
        "both",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("vacts <= acts (1/w_s) on every row: yes"));
    let csv = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "inclination_deg,inverse_manipulability_acts,inverse_manipulability_vacts,error_acts,error_vacts"
    );
    assert_eq!(lines.count(), 15);
    assert_digests(out.path());

    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "twist",
        "--range",
        "0:1:2",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown sweep axis"));
}

#[test]
fn simulate_reports_errors_and_noise_increases_them() {
    let scn = configs().join("resize_hover.scn");
    let quiet = tempfile::tempdir().unwrap();
    let noisy = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        scn.to_str().unwrap(),
        "--out",
        quiet.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("cable 3") && stdout.contains("winch saturation"));
    let o = run(&[
        "simulate",
        "--scenario",
        scn.to_str().unwrap(),
        "--out",
        noisy.path().to_str().unwrap(),
        "--noise",
        "mocap",
        "--seed",
        "5",
    ]);
    assert_eq!(code(&o), 0);
    let summary = |d: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap()
    };
    let (q, n) = (summary(quiet.path()), summary(noisy.path()));
    assert_eq!(q["schema_version"], 1);
    assert_eq!(q["length_error"]["mean"].as_array().unwrap().len(), 3);
    assert!(q["saturated_ticks"].is_array());
    let std_sum = |v: &serde_json::Value| {
        v["payload_error"]["std"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum::<f64>()
    };
    assert!(std_sum(&n) > std_sum(&q));
    assert_digests(quiet.path());
    let m = manifest(quiet.path());
    assert!(m["scenario"]["sha256"].is_string());
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn divergence_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("resize_hover.scn")).unwrap();
    let text = text
        .replace(
            "system = \"prototype.sys\"",
            &format!("system = {:?}", configs().join("prototype.sys").to_str().unwrap()),
        )
        .replace("divergence_bound = \"1 m\"", "divergence_bound = \"20 cm\"")
        + "\n[[phase]]\nkind = \"hover\"\nduration = \"1 s\"\npayload_position = [0, 0, 1.0]\n";
    let scn = dir.path().join("tight.scn");
    std::fs::write(&scn, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "simulate",
        "--scenario",
        scn.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["status"], "failed");
    assert!(m["failure"].as_str().unwrap().contains("exceeded bound"));
    assert!(std::fs::read_to_string(out.join("timeseries.csv")).unwrap().lines().count() > 1);
    assert_digests(&out);
}
