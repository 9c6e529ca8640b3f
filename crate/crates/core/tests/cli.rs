//! End-to-end behaviour of the `feedopt` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use feedopt::config::Config;

const SMALL: &str = "[suite]\nhorizon = 720\np_values = [0.5, 1.0]\nn_experiments = 2\nlate_start = 600\n\
[costs]\nswitch_times = [240, 480]\n\
[constraints]\nperiod = 240\n\
[gp]\neval_period = 60\n\
[validation]\nhorizon = 60\nn_trials_expectation = 1000\nn_trials_hp = 1000\ncheck_times = [6, 30, 60]\n\
error_norm_samples = 10000\ncalculus_samples = 5000\n\
moment_samples = 100000\nmoment_zetas = [0.5]\nmoment_ps = [0.7]\nmoment_ts = [5]\nmoment_ks = [1.0]\n";

fn feedopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feedopt")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_in(dir: &Path, command: &str, config: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    feedopt(&args)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(feedopt(&["--help"]).status.code(), Some(0));
    assert_eq!(feedopt(&[]).status.code(), Some(1));
    assert_eq!(feedopt(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(feedopt(&["gp-demo"]).status.code(), Some(1), "--out is required");
    let tmp = tempfile::tempdir().unwrap();
    let o = feedopt(&["gp-demo", "--out", tmp.path().to_str().unwrap(), "--jobs", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--jobs"));
}

#[test]
fn missing_config_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.toml");
    let o = run_in(tmp.path(), "run-scenario", &missing, "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[algorithm]\nalpah = 0.5\n");
    let o = run_in(tmp.path(), "run-scenario", &cfg, "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpah"), "{}", stderr(&o));
}

#[test]
fn oversized_step_is_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", &format!("{SMALL}\n[algorithm]\nalpha = 50.0\n"));
    let o = run_in(tmp.path(), "run-scenario", &cfg, "s", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("2/L"), "{}", stderr(&o));
    assert!(!tmp.path().join("s").join("suite_summary.csv").exists());

    let cfg = write_config(tmp.path(), "b.toml", &SMALL.replace("[validation]\n", "[validation]\nalpha = 10.0\n"));
    for command in ["validate-bounds", "bound-curve"] {
        let o = run_in(tmp.path(), command, &cfg, command, &[]);
        assert_eq!(o.status.code(), Some(1), "{command}");
        assert!(stderr(&o).contains("2/L"), "{}", stderr(&o));
    }
}

#[test]
fn refuses_to_overwrite_without_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    assert_eq!(run_in(tmp.path(), "gp-demo", &cfg, "g", &[]).status.code(), Some(0));
    let csv = tmp.path().join("g").join("gp_demo.csv");
    let before = std::fs::read(&csv).unwrap();
    let o = run_in(tmp.path(), "gp-demo", &cfg, "g", &["--seed", "99"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--overwrite"));
    assert_eq!(std::fs::read(&csv).unwrap(), before);
    assert_eq!(run_in(tmp.path(), "gp-demo", &cfg, "g", &["--seed", "99", "--overwrite"]).status.code(), Some(0));
    assert_ne!(std::fs::read(&csv).unwrap(), before);
}

#[test]
fn run_scenario_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "s.toml", SMALL);
    let o = run_in(tmp.path(), "run-scenario", &cfg_path, "out", &["--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("out");

    // Echoed config is the file's config; the override lives in run_meta.json.
    let echoed = Config::load(&out.join("config_resolved.toml")).unwrap();
    let cfg = Config::load(&cfg_path).unwrap();
    assert_eq!(echoed, cfg);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["seed_overridden"], true);

    let mut rdr = csv::Reader::from_path(out.join("suite_summary.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["p", "mode", "t", "mean_d", "std_d"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 720 * 2 * 2);
    // At least 12 significant digits in every numeric field.
    let mantissa = rows[5][3].split('e').next().unwrap().replace(['.', '-'], "");
    assert!(mantissa.len() >= 12, "{}", &rows[5][3]);

    let trajectories =
        std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("traj_")).count();
    assert_eq!(trajectories, 2 * 2 * 2);
    for name in ["model_switches.csv", "suite_diagnostics.csv", "scenario_instance.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn validate_bounds_reports_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "v.toml", SMALL);
    let o = run_in(tmp.path(), "validate-bounds", &cfg, "v", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let rows = csv::Reader::from_path(tmp.path().join("v").join("validation_report.csv")).unwrap().records().count();
    assert!(stdout.contains(&format!("{rows} of {rows} checks passed")), "{stdout}");
    // expectation + 2 deltas x 3 times + 1 moment + 128 calculus + contraction
    assert_eq!(rows, 1 + 6 + 1 + 128 + 1);
}

#[test]
fn bound_curve_without_deltas_writes_expectation_curves_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", &format!("{SMALL}\n[bounds]\ndeltas = []\nhorizon = 40\n"));
    let o = run_in(tmp.path(), "bound-curve", &cfg, "b", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut csvs: Vec<String> = std::fs::read_dir(tmp.path().join("b"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(csvs, ["bound_expectation.csv", "bound_expectation_asymptotic.csv"]);
    let rows = csv::Reader::from_path(tmp.path().join("b").join("bound_expectation.csv")).unwrap().records().count();
    assert_eq!(rows, 41);
}

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(Config::load(&path).unwrap(), Config::default());
}
