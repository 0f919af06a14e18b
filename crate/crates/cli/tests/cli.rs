use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kyle-infoacq"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const TWO_STATE: &str = r#"
experiment = "two-state"
[model]
lambda = 2.0
sigma_z = 1.0
[prior]
kind = "two-state"
lo = -2.0
hi = 2.0
p_hi = 0.3
"#;

fn read_csv(path: &Path) -> (String, Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect())
        .collect();
    (comment, header, rows)
}

#[test]
fn two_state_report_is_finite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", TWO_STATE);
    let out = tmp.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let obj = report.as_object().unwrap();
    for key in ["value", "expected_profit", "info_cost", "mutual_information", "leakage_w2sq", "w2sq"] {
        assert!(obj[key].as_f64().unwrap().is_finite(), "{key}");
    }
    for m in obj["moments"].as_object().unwrap().values() {
        assert!(m.as_f64().unwrap().is_finite());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["model"]["lambda"], 2.0);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["run"]["diagnostics"][0]["residual"].as_f64().unwrap() < 1e-9);
    let (comment, header, rows) = read_csv(&out.join("posterior.csv"));
    assert!(comment.starts_with("# ") && comment.contains("lambda=2") && comment.contains("p_hi"));
    assert_eq!(header, ["z", "mean", "p_-2", "p_2"]);
    for r in rows {
        assert!((r[2] + r[3] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn simulation_json_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{TWO_STATE}\n[simulation]\nn_paths = 400\nn_steps = 200\n").replace("\"two-state\"\n[model]", "\"simulate\"\nseed = 11\n[model]");
    let cfg = write(tmp.path(), "sim.toml", &body);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("o{k}"));
        let o = run(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(out.join("simulation.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let other = tmp.path().join("o2");
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "12"]);
    assert!(o.status.success());
    assert_ne!(outputs[0], std::fs::read(other.join("simulation.json")).unwrap());
}

#[test]
fn sweep_with_failing_point_is_partial() {
    let tmp = tempfile::tempdir().unwrap();
    let body = TWO_STATE.replace("\"two-state\"\n[model]", "\"sweep\"\n[model]")
        + "[solver]\ntol = 1e-13\nmax_iter = 40\n[sweep]\naxis = \"lambda\"\ngrid = [0.05, 2.0, 8.0]\n";
    let cfg = write(tmp.path(), "sweep.toml", &body);
    let out = tmp.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, header, rows) = read_csv(&out.join("sweep.csv"));
    assert_eq!(header[0], "lambda");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][1], 0.0);
    assert!(rows[1..].iter().all(|r| r[1] == 1.0 && r[2].is_finite()));
    let failures: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("failures.json")).unwrap()).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 1);
    assert_eq!(failures[0]["axis_value"], 0.05);
}

#[test]
fn bad_configs_exit_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = write(tmp.path(), "typo.toml", &TWO_STATE.replace("sigma_z", "sigma"));
    let o = run(&["run", typo.to_str().unwrap(), "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let neg = write(tmp.path(), "neg.toml", &TWO_STATE.replace("lambda = 2.0", "lambda = -2.0"));
    let o = run(&["run", neg.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));
    let empty = TWO_STATE.replace("\"two-state\"\n[model]", "\"sweep\"\n[model]") + "[sweep]\naxis = \"lambda\"\ngrid = []\n";
    let empty = write(tmp.path(), "empty.toml", &empty);
    let o = run(&["run", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["run", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["figure", "fig9", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = write(tmp.path(), "file", "");
    let o = run(&["figure", "fig1", "--out", blocker.join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fig1_panels_and_golden_stability() {
    let tmp = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("r{k}"));
        let o = run(&["figure", "fig1", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let dir = out.join("sym_pri_lam");
        let mut panels = Vec::new();
        for p in ["panelA", "panelB", "panelC", "panelD"] {
            assert!(dir.join(format!("{p}.svg")).exists());
            panels.push(read_csv(&dir.join(format!("{p}.csv"))));
        }
        tables.push(panels);
    }
    for (a, b) in tables[0].iter().zip(&tables[1]) {
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.1[0], "lambda");
        assert!(a.0.contains("v1=-2") && a.0.contains("v2=2") && a.0.contains("sigma_z=1") && a.0.contains("T=1"));
        assert_eq!(a.2.len(), b.2.len());
        for (ra, rb) in a.2.iter().zip(&b.2) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
            }
        }
    }
    let lambdas: Vec<f64> = tables[0][0].2.iter().map(|r| r[0]).collect();
    for l in [1.0, 2.0, 4.0, 8.0] {
        assert!(lambdas.contains(&l));
    }
}

#[test]
fn fig1_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["figure", "fig1", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/sym_pri_lam");
    for p in ["panelA", "panelB", "panelC", "panelD"] {
        let (gc, gh, grows) = read_csv(&golden.join(format!("{p}.csv")));
        let (c, h, rows) = read_csv(&tmp.path().join("sym_pri_lam").join(format!("{p}.csv")));
        assert_eq!((gc, gh), (c, h), "{p}");
        assert_eq!(grows.len(), rows.len(), "{p}");
        for (a, b) in grows.iter().zip(&rows) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9 || (x.is_nan() && y.is_nan()), "{p}: {x} vs {y}");
            }
        }
    }
}
