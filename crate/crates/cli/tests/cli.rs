use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cathrod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cathrod"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

const SMALL: &str = r#"
name = "small"
[rod]
youngs_bend = 5.9e6
density = 11040.0
radius = 0.006
length = 0.12
num_points = 10
[load]
hanging_mass = 0.02
[reference]
oracle = true
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = cathrod(&["--out-dir", out_dir.to_str().unwrap(), "run", &cfg]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["result.json", "centerline_rod.csv", "centerline_reference.csv", "trace.csv", "plot.svg"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["converged"], true);
    assert!(result["metrics"]["tip_error_fraction"].as_f64().unwrap() < 0.05);
}

#[test]
fn two_points_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("num_points = 10", "num_points = 2"));
    let out = cathrod(&["--out-dir", dir.path().to_str().unwrap(), "run", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("at least 3"), "{}", stderr(&out));
}

#[test]
fn missing_config_is_exit_2() {
    let out = cathrod(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn non_convergence_is_exit_3_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[integrator]\nmax_steps = 3\n"));
    let out_dir = dir.path().join("out");
    let out = cathrod(&["--out-dir", out_dir.to_str().unwrap(), "run", &cfg]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let result = fs::read_to_string(out_dir.join("result.json")).unwrap();
    assert!(result.contains("\"max-steps\""));
    assert!(out_dir.join("centerline_rod.csv").exists());
}

#[test]
fn sweep_unknown_parameter_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[sweep]\nparameter = \"stiffness\"\nvalues = [1.0]\n"));
    let out = cathrod(&["--out-dir", dir.path().to_str().unwrap(), "sweep", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown sweep parameter"));
}

#[test]
fn sweep_summary_keeps_value_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[sweep]\nparameter = \"N\"\nvalues = [12, 6, 9]\n"));
    let out_dir = dir.path().join("out");
    let out = cathrod(&["--out-dir", out_dir.to_str().unwrap(), "--threads", "3", "sweep", &cfg]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let values: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["12", "6", "9"]);
    assert!(out_dir.join("01_N_6/result.json").exists());
}

#[test]
fn oracle_linear_check() {
    // α = F·L²/(2EI) = 0.01
    let (l, e, r) = (0.12_f64, 5.9e6_f64, 0.006_f64);
    let ei = e * std::f64::consts::PI * r.powi(4) / 4.0;
    let force = 0.02 * ei / (l * l);
    let out = cathrod(&[
        "oracle",
        "--force",
        &force.to_string(),
        "--length",
        "0.12",
        "--youngs",
        "5.9e6",
        "--radius",
        "0.006",
        "--linear-check",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let ratio: f64 = text.trim().strip_prefix("linear_ratio = ").unwrap().parse().unwrap();
    assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
}

#[test]
fn oracle_rejects_bad_inputs() {
    let base = ["oracle", "--length", "0.12", "--youngs", "5.9e6", "--radius", "0.006"];
    let negative = cathrod(&[&base[..], &["--force", "-1.0"]].concat());
    assert_eq!(code(&negative), 2);
    let huge = cathrod(&[&base[..], &["--force", "1e6"]].concat());
    assert_eq!(code(&huge), 2, "{}", stderr(&huge));
}

#[test]
fn oracle_writes_csv_on_stdout() {
    let out = cathrod(&[
        "oracle", "--mass", "0.05", "--length", "0.12", "--youngs", "5.9e6", "--radius", "0.006", "--samples", "50",
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,x_m,y_m"));
    assert_eq!(lines.count(), 50);
}

fn write_curve(path: &Path, pts: &[[f64; 2]]) {
    let mut s = String::from("index,x_m,y_m\n");
    for (i, p) in pts.iter().enumerate() {
        s += &format!("{i},{},{}\n", p[0], p[1]);
    }
    fs::write(path, s).unwrap();
}

#[test]
fn compare_identity_and_rectangle() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_curve(&a, &[[0.0, 0.0], [0.05, 0.0], [0.1, 0.0]]);
    write_curve(&b, &[[0.0, 0.001], [0.05, 0.001], [0.1, 0.001]]);
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());

    let same = cathrod(&["compare", a, a, "--length", "0.1", "--metric", "area"]);
    assert_eq!(code(&same), 0, "{}", stderr(&same));
    assert_eq!(json(&same)["area_error"].as_f64().unwrap(), 0.0);

    let rect = cathrod(&["compare", a, b, "--length", "0.1", "--metric", "area"]);
    let area = json(&rect)["area_error"].as_f64().unwrap();
    assert!((area - 0.001).abs() < 1e-15, "{area}");

    let both = cathrod(&["compare", a, b, "--length", "0.1"]);
    let report = json(&both);
    assert!(report["tip_error_fraction"].as_f64().unwrap() > 0.0);
    assert!(report["area_error"].is_number());
}

#[test]
fn compare_missing_file_is_exit_2() {
    let out = cathrod(&["compare", "/nonexistent/a.csv", "/nonexistent/b.csv", "--length", "0.1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_reads_millimetres() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let mm = dir.path().join("mm.csv");
    write_curve(&m, &[[0.0, 0.0], [0.1, -0.02]]);
    write_curve(&mm, &[[0.0, 0.0], [100.0, -20.0]]);
    let out = cathrod(&[
        "compare",
        m.to_str().unwrap(),
        mm.to_str().unwrap(),
        "--length",
        "0.1",
        "--metric",
        "tip",
    ]);
    // Both files are read in the same unit, so they differ by a factor 1000.
    assert!(json(&out)["tip_error_fraction"].as_f64().unwrap() > 1.0);
    let out = cathrod(&["--units", "mm", "compare", mm.to_str().unwrap(), mm.to_str().unwrap(), "--length", "0.1"]);
    assert_eq!(json(&out)["tip_error_fraction"].as_f64().unwrap(), 0.0);
}

#[test]
fn shipped_50g_matches_oracle_through_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = shipped("cantilever_50g.toml");
    let out = cathrod(&["--out-dir", out_dir.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let oracle = dir.path().join("oracle.csv");
    let out = cathrod(&[
        "oracle", "--mass", "0.05", "--length", "0.12", "--youngs", "5.9e6", "--radius", "0.006", "--output",
        oracle.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let sim = out_dir.join("centerline_rod.csv");
    let out = cathrod(&[
        "compare",
        sim.to_str().unwrap(),
        oracle.to_str().unwrap(),
        "--length",
        "0.12",
        "--metric",
        "tip",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(json(&out)["tip_error_fraction"].as_f64().unwrap() < 0.01);
}

#[test]
fn reruns_are_identical_except_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let read = |sub: &str| {
        let d = dir.path().join(sub);
        let out = cathrod(&["--out-dir", d.to_str().unwrap(), "run", &cfg]);
        assert_eq!(code(&out), 0);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("result.json")).unwrap()).unwrap();
        v["wall_time"] = serde_json::Value::Null;
        v
    };
    assert_eq!(read("a"), read("b"));
}
