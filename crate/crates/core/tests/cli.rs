use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_qdelay");

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn qdelay(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .env_remove("QDELAY_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn edited(name: &str, dir: &Path, edits: &[(&str, Value)]) -> PathBuf {
    let mut v: Value =
        serde_json::from_str(&std::fs::read_to_string(bundled(name)).unwrap()).unwrap();
    for (path, value) in edits {
        qdelay::scenario::set_path(&mut v, path, value.clone()).unwrap();
    }
    let p = dir.join(format!("{name}-edited.json"));
    std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p
}

#[test]
fn constants_echo_pins_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["constants"], &bundled("fig2"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(
        text.lines()
            .any(|l| l.contains("mbar1") && l.contains("= 2.0 ") && l.contains("pinned")),
        "{text}"
    );

    let o = qdelay(&["constants", "--json"], &bundled("fig2"), dir.path());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["constants"]["m1"]["value"], 4.5);
    assert_eq!(v["constants"]["m1"]["provenance"], "pinned");
    assert_eq!(v["constants"]["m3"]["provenance"], "computed");
    assert_eq!(v["condition"]["holds"], false);
}

#[test]
fn strict_constants_flag_condition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["--strict", "constants"], &bundled("fig2"), dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn infeasible_lambda_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = edited("fig2", dir.path(), &[("constants.lambda", 2.0.into())]);
    let o = qdelay(&["constants"], &p, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("small-gain"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn missing_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["simulate"], &dir.path().join("nope.json"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_csv_manifest_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["simulate"], &bundled("fig2"), dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("fig2.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,x1,x2,U,mu,phase,norm,envelope"
    );
    assert_eq!(csv.lines().count(), 4002);
    let man: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fig2.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(man["analysis"]["summary"]["classification"], "converged");
    assert_eq!(
        man["constants"]["constants"]["omega"]["provenance"],
        "pinned"
    );
    assert_eq!(man["scenario"]["name"], "fig2");
    let plot = std::fs::read_to_string(dir.path().join("fig2.plot.csv")).unwrap();
    assert!(plot.starts_with("t,norm,mu_envelope,theorem_bound"));
}

#[test]
fn figure_baselines_exit_by_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["simulate"], &bundled("fig3"), dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("diverged"));
    let o = qdelay(&["simulate"], &bundled("fig4"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("limit-cycle-like"));
    let csv = std::fs::read_to_string(dir.path().join("fig4.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",fixed,"));
}

#[test]
fn baseline_uses_the_requested_zoom() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["baseline", "--mu", "0.1"], &bundled("fig2"), dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("fixed mu = 0.1"));
    assert!(dir.path().join("fig2.baseline.csv").exists());
}

#[test]
fn backend_flag_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let p = edited("fig2", dir.path(), &[("grid.dt_s", 0.02.into())]);
    let o = qdelay(&["--backend", "exact", "simulate"], &p, dir.path());
    assert_eq!(o.status.code(), Some(0));
    let man: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fig2.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(man["scenario"]["backend"], "exact");
    let o = qdelay(&["--backend", "spectral", "simulate"], &p, dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["simulate", "--scenario"])
        .arg(bundled("fig4"))
        .env("QDELAY_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("fig4.csv").exists());
}

#[test]
fn verify_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["verify"], &bundled("input_mode"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("ok")));

    // the fig2 quantizer is far above the state-mode bound
    let o = qdelay(&["verify"], &bundled("fig2"), dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL state-quantization condition"));
    assert!(stdout(&o).contains("ok   small-gain"));

    let p = edited(
        "input_mode",
        dir.path(),
        &[
            ("quantizer.error_delta", 0.0.into()),
            ("constants.overrides", serde_json::json!({"omega": 0.5})),
        ],
    );
    let o = qdelay(&["verify"], &p, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn strict_simulate_refuses_infeasible_quantizers() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(&["--strict", "simulate"], &bundled("fig2"), dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(!dir.path().join("fig2.csv").exists());
}

#[test]
fn empty_sweep_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(
        &["sweep", "--param", "quantizer.error_delta", "--values", ""],
        &bundled("fig2"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("nothing to sweep"));
}

fn sweep_rows(dir: &Path, name: &str) -> Vec<Value> {
    let v: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join(format!("{name}.sweep.json"))).unwrap(),
    )
    .unwrap();
    v["rows"].as_array().unwrap().clone()
}

#[test]
fn sweep_across_the_quantizer_bound() {
    let dir = tempfile::tempdir().unwrap();
    let values = "1e-8,1e-4,0.02,0.5,1.0";
    let o = qdelay(
        &[
            "sweep",
            "--param",
            "quantizer.error_delta",
            "--values",
            values,
        ],
        &bundled("fig2"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = sweep_rows(dir.path(), "fig2");
    let vals: Vec<f64> = rows.iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert_eq!(vals, vec![1e-8, 1e-4, 0.02, 0.5, 1.0]);
    assert_eq!(rows[0]["condition_holds"], true);
    assert_eq!(rows[0]["classification"], "converged");
    assert!(rows[1..].iter().all(|r| r["condition_holds"] == false));
    assert_ne!(rows[4]["classification"], "converged");
}

#[test]
fn sweep_over_delay_researches_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(
        &["sweep", "--param", "plant.delay_s", "--values", "0.5,1,2"],
        &bundled("input_mode"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = sweep_rows(dir.path(), "input_mode");
    let lam: Vec<f64> = rows
        .iter()
        .map(|r| r["lambda_min"].as_f64().unwrap())
        .collect();
    assert!(lam.windows(2).all(|w| w[1] >= w[0]), "{lam:?}");
}

#[test]
fn sweep_reports_bad_values_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdelay(
        &["sweep", "--param", "grid.dt_s", "--values", "0.01,0.5"],
        &bundled("fig4"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = sweep_rows(dir.path(), "fig4");
    assert!(rows[0]["error"].is_null());
    assert!(rows[1]["error"].as_str().unwrap().contains("CFL"));
}
