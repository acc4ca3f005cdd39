use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn oscloop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscloop")).args(args).current_dir(dir).output().expect("binary runs")
}

fn experiment(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "experiments", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=` on the line starting with `prefix`.
fn summary_value(text: &str, prefix: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(prefix)).expect("summary line");
    let field = line.split_whitespace().find_map(|f| f.strip_prefix(&format!("{key}="))).expect("field");
    field.parse().unwrap()
}

#[test]
fn relaxation_example_summary_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["simulate", "--config", &experiment("relaxation_example.toml"), "--out", "t.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let period = summary_value(&stdout(&o), "y:", "period");
    assert!((period - 2.1972).abs() < 1e-3, "{period}");
    assert!(stdout(&o).contains("shape=square"));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,r,u,y,x,event_flag"));
    let ys: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(ys.iter().all(|y| y.abs() == 1.0));
}

#[test]
fn sinusoid_example_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["simulate", "--config", &experiment("sinusoid_example.toml"), "--out", "s.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let f = summary_value(&stdout(&o), "y:", "frequency");
    assert!((f - 0.2757).abs() < 1e-4, "{f}");
    assert!((summary_value(&stdout(&o), "y:", "amplitude") - 0.5).abs() < 5e-3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["simulate", "--a", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`a`"), "{}", stderr(&o));

    std::fs::write(dir.path().join("bad.toml"), "[loop]\nk_plus = 2.0\ngain = 3.0\n").unwrap();
    let o = oscloop(dir.path(), &["simulate", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gain"), "{}", stderr(&o));

    let o = oscloop(dir.path(), &["period", "--config", &experiment("fig3_bifurcation.toml")]);
    assert_eq!(o.status.code(), Some(2), "command mismatch");

    let o = oscloop(dir.path(), &["sweep", "--kplus", "2"]);
    assert_eq!(o.status.code(), Some(2), "missing sweep spec");
}

#[test]
fn analytic_domain_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["period", "--kplus", "2", "--kminus", "0.9"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("NonPositiveLogArgument"));

    let o = oscloop(dir.path(), &["hbalance", "--n", "2", "--kminus", "5"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("NoCrossing"));
}

#[test]
fn simulation_errors_exit_3() {
    // K+ = a/b with zero feedback input: the inner loop has no unique solution
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["simulate", "--kplus", "1", "--kminus", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("SingularLoop"));
}

#[test]
fn rlocus_reports_crossings() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["rlocus", "--n", "3", "--out", "r.csv"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let c = &report["crossings"][0];
    assert!((c["omega"].as_f64().unwrap() - 1.732051).abs() < 1e-6);
    assert!((c["gain"].as_f64().unwrap() - 8.0).abs() < 1e-9);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,root,re,im"));
    assert_eq!(csv.lines().count(), 1 + 201 * 3);

    let o = oscloop(dir.path(), &["rlocus", "--n", "7"]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["crossings"].as_array().unwrap().len(), 2);
}

#[test]
fn analysis_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["existence", "--kplus", "2", "--kminus", "2", "--out", "e.json", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(v["oscillates"], serde_json::Value::Bool(true));

    let o = oscloop(dir.path(), &["period", "--integrator", "--kplus", "2", "--kminus", "2", "--out", "p.csv"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(csv.starts_with("frequency,half_period,period,x_high,x_low\n0.5,1,2,"), "{csv}");

    let o = oscloop(dir.path(), &["hbalance", "--config", &experiment("hbalance_n3.toml"), "--out", "h.json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["amplitude"].as_f64().unwrap() - 2.476).abs() < 1e-3);

    let o = oscloop(dir.path(), &["boundary", "--out", "b.csv"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(csv.contains("\n2,1\n"), "{csv}");
}

#[test]
fn profile_commands_print_labels() {
    let dir = tempfile::tempdir().unwrap();
    let o = oscloop(dir.path(), &["sweep", "--config", &experiment("profile_horizontal.toml"), "--out", "h.csv"]);
    assert!(stdout(&o).starts_with("label=horizontal"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k_minus,amplitude,frequency,predicted_amplitude,predicted_frequency"));

    let o = oscloop(dir.path(), &["sweep", "--config", &experiment("profile_vertical.toml"), "--out", "v.csv"]);
    assert!(stdout(&o).starts_with("label=vertical"), "{}", stdout(&o));

    std::fs::write(
        dir.path().join("grid.toml"),
        "[grid]\nk_plus = { start = 0.5, stop = 3.0, count = 6 }\nk_minus = { start = 0.1, stop = 3.0, count = 6 }\n",
    )
    .unwrap();
    let o = oscloop(dir.path(), &["bifurcation", "--config", "grid.toml", "--out", "m.csv"]);
    assert!(stdout(&o).starts_with("disagreements=0 "), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().count(), 37);
}

#[test]
fn echoed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for name in std::fs::read_dir(experiment("")).unwrap() {
        let path = name.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let command = text.lines().find_map(|l| l.strip_prefix("command = ")).unwrap().trim_matches('"');
        let path = path.to_string_lossy();
        let first = oscloop(dir.path(), &[command, "--config", &path, "--kminus", "2.5", "--print-config"]);
        assert!(first.status.success(), "{path}: {}", stderr(&first));
        std::fs::write(dir.path().join("echo.toml"), &first.stdout).unwrap();
        let second = oscloop(dir.path(), &[command, "--config", "echo.toml", "--print-config"]);
        assert_eq!(first.stdout, second.stdout, "{path}");
        assert!(stdout(&first).contains("k_minus = 2.5"));
    }
}
