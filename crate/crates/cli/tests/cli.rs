use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn selfdual(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfdual"))
        .args(args)
        .env_remove("SDE_SEED")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn arg(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gl_skew_run_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let res = selfdual(&["run", "--preset", "gl_skew", "--n", "16", "--N", "64", "--T", "1.0", "--out", arg(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", text(&res.stderr));
    let report = read_json(&out);
    assert_eq!(report["schema"], 1);
    assert_eq!(report["certified"], true);
    assert_eq!(report["passed"], true);
    assert_eq!(report["intervals"], 64);
    assert!(text(&res.stdout).contains("PASS"));
}

#[test]
fn nls_reports_mild_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let res = selfdual(&["run", "--preset", "nls_cubic", "--check", "mild", "--quiet", "--out", arg(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", text(&res.stderr));
    assert!(res.stdout.is_empty());
    let mild = read_json(&out)["mild_residual"].as_f64().unwrap();
    assert!(mild <= 1e-3, "{mild}");
}

#[test]
fn trajectory_dump_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let csv = dir.path().join("trajectory.csv");
    for name in ["gl_skew", "ham_bilaplacian_isometry", "nls_cubic"] {
        let res = selfdual(&["run", "--preset", name, "--quiet", "--out", arg(&out), "--trajectory", arg(&csv)]);
        assert_eq!(res.status.code(), Some(0), "{name}: {}", text(&res.stderr));
        let dump = std::fs::read_to_string(&csv).unwrap();
        let header = dump.lines().next().unwrap();
        let dim = read_json(&out)["dim"].as_u64().unwrap() as usize;
        assert!(header.starts_with("t,component_0,"));
        assert!(header.ends_with(&format!("component_{}", dim - 1)));
        let res = selfdual(&["evaluate", "--report", arg(&out), "--trajectory", arg(&csv)]);
        assert_eq!(res.status.code(), Some(0), "{name}: {}{}", text(&res.stdout), text(&res.stderr));
    }
}

#[test]
fn dump_uses_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trajectory.csv");
    let res = selfdual(&["run", "--preset", "gl_diffusive", "--quiet", "--trajectory", arg(&csv)]);
    assert_eq!(res.status.code(), Some(0));
    let dump = std::fs::read_to_string(&csv).unwrap();
    let row = dump.lines().nth(1).unwrap();
    let field = row.split(',').nth(1).unwrap();
    let mantissa = field.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
    assert_eq!(mantissa.len(), 17, "{field}");
}

#[test]
fn tampered_dump_fails_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let csv = dir.path().join("trajectory.csv");
    selfdual(&["run", "--preset", "gl_skew", "--quiet", "--out", arg(&out), "--trajectory", arg(&csv)]);
    let dump = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = dump.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[5].split(',').map(String::from).collect();
    let bumped = fields[3].parse::<f64>().unwrap() + 1e-3;
    fields[3] = format!("{bumped:.16e}");
    lines[5] = fields.join(",");
    std::fs::write(&csv, lines.join("\n")).unwrap();
    let res = selfdual(&["evaluate", "--report", arg(&out), "--trajectory", arg(&csv)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"preset": "gl_skew", "solver": {"restarts": 1, "tolerance": 1e-3}}"#).unwrap();
    let res = selfdual(&["run", "--config", arg(&cfg)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(text(&res.stderr).contains("tolerance"), "{}", text(&res.stderr));
}

#[test]
fn inline_problem_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let problem = text(&selfdual(&["presets", "gl_advection"]).stdout);
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("report.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"problem": {problem}, "N": 16, "solver": {{"restarts": 0}}, "out": "{}"}}"#, arg(&out)),
    )
    .unwrap();
    let res = selfdual(&["run", "--config", arg(&cfg), "--quiet"]);
    assert_eq!(res.status.code(), Some(0), "{}", text(&res.stderr));
    assert_eq!(read_json(&out)["intervals"], 16);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(selfdual(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(selfdual(&["run"]).status.code(), Some(1));
    assert_eq!(selfdual(&["run", "--preset", "no_such_preset"]).status.code(), Some(1));
    assert_eq!(selfdual(&["run", "--preset", "ham_bilaplacian", "--omega", "1"]).status.code(), Some(1));
    assert_eq!(selfdual(&["verify", "everything"]).status.code(), Some(1));
    assert_eq!(selfdual(&["--help"]).status.code(), Some(0));
}

#[test]
fn uncertified_run_exits_two() {
    let res = selfdual(&["run", "--preset", "ham_transport", "--max-iterations", "1", "--restarts", "0"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(text(&res.stdout).contains("FAIL: certificate"));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let res = Command::new(env!("CARGO_BIN_EXE_selfdual"))
        .args(["run", "--preset", "gl_diffusive", "--quiet", "--out", arg(&out)])
        .env("SDE_SEED", "1234")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(read_json(&out)["seed"], 1234);
}

#[test]
fn verify_duality_passes() {
    let res = selfdual(&["verify", "duality", "--seed", "7"]);
    assert_eq!(res.status.code(), Some(0));
    let stdout = text(&res.stdout);
    assert!(stdout.contains("PASS duality.fenchel_young"));
    assert!(stdout.contains("PASS duality.biconjugate"));
    assert!(!stdout.contains("lagrangian."));
}

#[test]
fn injected_sign_fault_is_caught() {
    let res = selfdual(&["verify", "duality", "--inject-fault", "sign"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(text(&res.stdout).contains("FAIL duality.fenchel_young"));
}

#[test]
fn presets_are_listed() {
    let res = selfdual(&["presets"]);
    assert_eq!(res.status.code(), Some(0));
    let stdout = text(&res.stdout);
    for name in selfdual::problems::PRESET_NAMES {
        assert!(stdout.contains(name));
    }
}
