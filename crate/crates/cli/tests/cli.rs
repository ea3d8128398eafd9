use std::path::Path;
use std::process::{Command, Output};

fn qddlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qddlab"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("QDDLAB_DIGITS")
        .output()
        .expect("binary runs")
}

fn rows(path: &Path) -> Vec<(f64, String)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,axis"));
    lines
        .map(|l| {
            let (t, a) = l.split_once(',').unwrap();
            (t.parse().unwrap(), a.to_string())
        })
        .collect()
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, json).unwrap();
    path
}

const SMALL: &str = r#"{
    "n": 1,
    "J": "1e-6",
    "beta": "1e-6",
    "bath_qubits": 2,
    "realizations": 3,
    "seed": 7,
    "digits": 30,
    "sweep": {"variable": "J", "grid": ["1e-7", "1e-6", "1e-5"]}
}"#;

#[test]
fn qdd_1_1_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = qddlab(dir.path(), &["sequence", "--scheme", "qdd", "-m", "1", "-n", "1", "-T", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = rows(&dir.path().join("qdd_m1_n1.csv"));
    let axes: Vec<&str> = r.iter().map(|(_, a)| a.as_str()).collect();
    assert_eq!(axes, ["X", "Y", "X", "Y"]);
    for ((t, _), want) in r.iter().zip([0.25, 0.5, 0.75, 1.0]) {
        assert!((t - want).abs() < 1e-15, "{t} vs {want}");
    }
}

#[test]
fn udd_2_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = qddlab(dir.path(), &["sequence", "--scheme", "udd", "-n", "2", "-T", "1"]);
    assert!(out.status.success());
    let r = rows(&dir.path().join("udd_n2.csv"));
    let times: Vec<f64> = r.iter().map(|(t, _)| *t).collect();
    assert_eq!(times.len(), 2);
    assert!((times[0] - 0.25).abs() < 1e-15);
    assert!((times[1] - 0.75).abs() < 1e-15);
}

#[test]
fn cdd_2_reports_sixteen_slots() {
    let dir = tempfile::tempdir().unwrap();
    let out = qddlab(dir.path(), &["sequence", "--scheme", "cdd", "-n", "2", "--lambda", "0.01"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let nominal = stdout
        .lines()
        .find(|l| l.starts_with("nominal pulses"))
        .unwrap();
    assert!(nominal.ends_with(" 16"), "{nominal}");
    assert!(stdout.contains("lambda T"));
}

#[test]
fn unknown_scheme_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = qddlab(dir.path(), &["sequence", "--scheme", "xdd", "-n", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = qddlab(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"digits": 30, "sweep": {"variable": "J", "grid": []}}"#,
    );
    let out = qddlab(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.grid"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"beta": 1e-6}"#);
    let out = qddlab(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
}

#[test]
fn sweep_output_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut csvs = Vec::new();
    for jobs in ["1", "8"] {
        let out_dir = dir.path().join(format!("jobs{jobs}"));
        let out = qddlab(
            &out_dir,
            &["--jobs", jobs, "sweep", "--config", cfg.to_str().unwrap()],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read(out_dir.join("qdd_n1.csv")).unwrap());
        assert!(out_dir.join("sweep.gp").exists());
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["seed"], 7);
        assert_eq!(manifest["digits"], 30);
        assert_eq!(manifest["config"]["J"], "1e-6");
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("sweep_value,mean_D,log10_mean_D,max_deviation,converged,realization_0"));
}

#[test]
fn exported_schedule_imports_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = qddlab(dir.path(), &["--digits", "30", "sequence", "--scheme", "qdd", "-n", "2", "-T", "9"]);
    assert!(out.status.success());
    let csv = dir.path().join("qdd_m2_n2.csv");
    let cfg = write_config(
        dir.path(),
        r#"{"scheme": "external", "sequence_file": "qdd_m2_n2.csv", "total_time": "9",
            "J": "1e-6", "beta": "1e-6", "bath_qubits": 2, "realizations": 2, "seed": 3,
            "digits": 30, "sweep": {"variable": "J", "grid": ["1e-6", "1e-5"]}}"#,
    );
    let ext = dir.path().join("ext");
    let out = qddlab(&ext, &["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let builtin_cfg = write_config(
        dir.path(),
        r#"{"n": 2, "J": "1e-6", "beta": "1e-6", "bath_qubits": 2, "realizations": 2,
            "seed": 3, "digits": 30, "sweep": {"variable": "J", "grid": ["1e-6", "1e-5"]}}"#,
    );
    let builtin = dir.path().join("builtin");
    let out = qddlab(&builtin, &["sweep", "--config", builtin_cfg.to_str().unwrap()]);
    assert!(out.status.success());
    // times pass through 30-digit decimals, so agreement is to rounding
    let means = |path: &Path| -> Vec<f64> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let a = means(&ext.join("external.csv"));
    let b = means(&builtin.join("qdd_n2.csv"));
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * y.abs(), "{x} vs {y}");
    }
    assert!(csv.exists());
}

#[test]
fn check_order_on_builtin_qdd2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n": 2, "beta": "1e-9", "bath_qubits": 2, "realizations": 2, "seed": 31,
            "digits": 40,
            "sweep": {"variable": "J", "from": "1e-7", "to": "1e-5", "per_decade": 3}}"#,
    );
    let out = qddlab(dir.path(), &["check-order", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("order_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["predicted_order"], 2);
    assert_eq!(report["regime"], "R1");
    assert_eq!(report["unreliable"], false);
}

#[test]
fn check_order_outside_r1_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n": 2, "beta": "1e-3", "bath_qubits": 2, "realizations": 1, "digits": 30,
            "sweep": {"variable": "J", "grid": ["1e-7", "1e-6", "1e-5"]}}"#,
    );
    let out = qddlab(dir.path(), &["check-order", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn digits_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"bath_qubits": 2, "realizations": 1, "sweep": {"variable": "J", "grid": ["1e-6"]}}"#,
    );
    let run = |extra: &[&str], env: Option<&str>| {
        let sub = dir.path().join(format!("run{}", extra.len()));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qddlab"));
        cmd.arg("--out").arg(&sub).args(extra);
        cmd.args(["sweep", "--config", cfg.to_str().unwrap()]);
        cmd.env_remove("QDDLAB_DIGITS");
        if let Some(v) = env {
            cmd.env("QDDLAB_DIGITS", v);
        }
        assert!(cmd.output().unwrap().status.success());
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(sub.join("manifest.json")).unwrap()).unwrap();
        manifest["digits"].as_u64().unwrap()
    };
    assert_eq!(run(&[], Some("35")), 35);
    assert_eq!(run(&["--digits", "25"], Some("35")), 25);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value.get("seed").is_some(), "{}", path.display());
    }
}
