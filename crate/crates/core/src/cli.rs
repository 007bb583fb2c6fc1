//! `qdelay` command line: scenario in, constants / trajectories / reports out.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 divergence, 4 theorem
//! condition failure (`verify` always, other commands under `--strict`).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    check_t0_bound, check_theorem1_envelope, check_window_decay, classify_baseline,
    envelope_respect_fraction, fit_decay_rate, reconstruct_disturbance, write_plot_data,
    Classification,
};
use crate::error::Error;
use crate::predictor::Predictor;
use crate::quantization::{validate_properties_grid, validate_state_channel};
use crate::scenario::{set_path, Prepared, Scenario};
use crate::sim::{manifest, run, write_csv_file, Backend, Controller, Trajectory};
use crate::switching::Mode;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_CONDITION: u8 = 4;

/// Environment variable supplying the default `--out` directory.
pub const OUT_DIR_ENV: &str = "QDELAY_OUT_DIR";

/// Grid points for the exhaustive quantizer check in `verify`.
const VERIFY_GRID_POINTS: usize = 100_000;

/// The tail over which the decay rate is fitted: the last half after `t0`.
const TAIL_START: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "qdelay",
    version,
    about = "Switched predictor feedback under zooming quantization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Override the scenario's transport backend.
    #[arg(long, global = true)]
    pub backend: Option<Backend>,
    /// Output directory for CSV and manifests.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Refuse to run when the theorem condition fails.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    #[arg(long, short)]
    pub scenario: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the design constants with their provenance.
    Constants {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run the scenario; write `<name>.csv`, `<name>.manifest.json`, `<name>.plot.csv`.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Check the theorem condition, small-gain condition and quantizer properties.
    Verify {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Re-run the scenario with one parameter replaced by each value in turn.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Dotted path into the scenario JSON, e.g. `quantizer.error_delta`.
        #[arg(long)]
        param: String,
        /// Comma-separated values (each parsed as JSON).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Run the plain quantized predictor at a fixed `μ` and classify the outcome.
    Baseline {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Fixed zoom; defaults to the scenario's fixed value or `μ0`.
        #[arg(long)]
        mu: Option<f64>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] Error),
    #[error("trajectory diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Condition(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Condition(_) => EXIT_CONDITION,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn main_with_args() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    ExitCode::from(execute(&cli, &mut stdout.lock()))
}

/// Runs a parsed command, writing the report to `out`; returns the exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> u8 {
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Constants { scenario, json } => {
            cmd_constants(&load(&scenario.scenario, g)?, *json, g, out)
        }
        Command::Simulate { scenario } => cmd_simulate(&load(&scenario.scenario, g)?, g, out),
        Command::Verify { scenario } => cmd_verify(&load(&scenario.scenario, g)?, out),
        Command::Sweep {
            scenario,
            param,
            values,
        } => {
            let base = load(&scenario.scenario, g)?;
            cmd_sweep(&base, param, values, g, out)
        }
        Command::Baseline { scenario, mu } => {
            cmd_baseline(&load(&scenario.scenario, g)?, *mu, g, out)
        }
    }
}

fn load(path: &Path, g: &GlobalArgs) -> CliResult<Scenario> {
    let mut s = Scenario::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Scenario(format!("{}: {io}", path.display())),
        other => other,
    })?;
    if let Some(b) = g.backend {
        s.backend = b;
    }
    Ok(s)
}

fn io(e: std::io::Error) -> CliError {
    CliError::Config(Error::Io(e))
}

fn warn_all(prepared: &Prepared) {
    for w in &prepared.warnings {
        eprintln!("warning: {w}");
    }
}

fn strict_gate(prepared: &Prepared, g: &GlobalArgs) -> CliResult<()> {
    if g.strict && !prepared.condition.holds {
        return Err(CliError::Condition(format!(
            "theorem condition fails: Delta/M = {:.4e} is not below {:.4e}",
            prepared.condition.ratio, prepared.condition.bound
        )));
    }
    Ok(())
}

pub fn cmd_constants(
    scenario: &Scenario,
    as_json: bool,
    g: &GlobalArgs,
    out: &mut dyn Write,
) -> CliResult<()> {
    let prepared = scenario.prepare()?;
    warn_all(&prepared);
    let c = &prepared.config.consts;
    if as_json {
        let mut m = c.manifest();
        m["condition"] = serde_json::to_value(prepared.condition).map_err(Error::from)?;
        m["tau"] = json!(prepared.config.switching.tau);
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&m).map_err(Error::from)?
        )
        .map_err(io)?;
    } else {
        let m = c.manifest();
        if let Some(map) = m["constants"].as_object() {
            for (name, entry) in map {
                writeln!(
                    out,
                    "{name:>12} = {:<24} {}",
                    entry["value"],
                    entry["provenance"].as_str().unwrap_or("")
                )
                .map_err(io)?;
            }
        }
        writeln!(out, "{:>12} = {}", "small_gain", c.small_gain_lhs).map_err(io)?;
        writeln!(out, "{:>12} = {}", "lambda_min", c.lambda_min).map_err(io)?;
        writeln!(out, "{:>12} = {}", "tau", prepared.config.switching.tau).map_err(io)?;
        let cond = prepared.condition;
        writeln!(
            out,
            "{:>12} : Delta/M = {:.4e} vs bound {:.4e} ({})",
            "condition",
            cond.ratio,
            cond.bound,
            if cond.holds { "holds" } else { "FAILS" }
        )
        .map_err(io)?;
    }
    strict_gate(&prepared, g)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub classification: Classification,
    pub t0: Option<f64>,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub max_norm: f64,
    pub tail_rate: f64,
    pub envelope_respect: f64,
}

fn tail_start(traj: &Trajectory) -> f64 {
    let t0 = traj.t0.unwrap_or(0.0);
    let end = traj.samples.last().map_or(0.0, |s| s.t);
    t0 + TAIL_START * (end - t0)
}

pub fn summarize(traj: &Trajectory) -> RunSummary {
    RunSummary {
        classification: classify_baseline(traj),
        t0: traj.t0,
        initial_norm: traj.initial_norm(),
        final_norm: traj.final_norm(),
        max_norm: traj.max_norm(),
        tail_rate: fit_decay_rate(traj, tail_start(traj)),
        envelope_respect: envelope_respect_fraction(traj),
    }
}

/// Analysis attached to the manifest. Checks that need stored profiles are
/// skipped when they are off.
pub fn analyze(prepared: &Prepared, traj: &Trajectory) -> CliResult<Value> {
    let cfg = &prepared.config;
    let summary = summarize(traj);
    let mut report = json!({
        "summary": summary,
        "condition": prepared.condition,
        "warnings": prepared.warnings,
    });
    if traj.controller == Controller::Switched {
        let env = check_theorem1_envelope(traj, &cfg.consts, &cfg.quant, &cfg.switching);
        report["theorem_envelope"] = json!({
            "gamma": env.gamma,
            "rate": env.rate,
            "exponent": env.exponent,
            "max_ratio": env.max_ratio,
            "violations": env.violations.len(),
            "skipped": env.skipped,
            "warnings": env.warnings,
        });
        report["t0_check"] = serde_json::to_value(check_t0_bound(
            traj,
            &cfg.consts,
            &cfg.quant,
            &cfg.switching,
        ))
        .map_err(Error::from)?;
    }
    if cfg.store_profiles && traj.controller != Controller::OpenLoop {
        let predictor = Predictor::new(&cfg.plant, &cfg.gains, cfg.grid.dx)?;
        if traj.controller == Controller::Switched && traj.t0.is_some() {
            let w = check_window_decay(traj, &cfg.consts, &cfg.quant, &predictor)?;
            report["window_decay"] = json!({
                "windows": w.windows.len(),
                "violations": w.violations.len(),
                "min_margin": w.min_margin(),
            });
        }
        let d = reconstruct_disturbance(traj, &cfg.consts, &cfg.quant, &predictor)?;
        let worst = d
            .points
            .iter()
            .filter(|p| !p.saturated && p.bound > 0.0)
            .map(|p| p.d.abs() / p.bound)
            .fold(0.0_f64, f64::max);
        report["disturbance"] = json!({
            "points": d.points.len(),
            "saturated": d.points.iter().filter(|p| p.saturated).count(),
            "violations": d.violations.len(),
            "max_ratio": worst,
        });
    }
    Ok(report)
}

fn write_outputs(
    scenario: &Scenario,
    prepared: &Prepared,
    traj: &Trajectory,
    analysis: Value,
    dir: &Path,
    stem: &str,
) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_csv_file(traj, &csv)?;
    let cfg = &prepared.config;
    let env = check_theorem1_envelope(traj, &cfg.consts, &cfg.quant, &cfg.switching);
    let plot = dir.join(format!("{stem}.plot.csv"));
    write_plot_data(
        traj,
        &env,
        std::io::BufWriter::new(std::fs::File::create(&plot).map_err(io)?),
    )?;
    let man = dir.join(format!("{stem}.manifest.json"));
    let value = manifest(&scenario.to_value()?, &cfg.consts, traj, analysis);
    std::fs::write(
        &man,
        serde_json::to_string_pretty(&value).map_err(Error::from)?,
    )
    .map_err(io)?;
    Ok(vec![csv, man, plot])
}

fn report_run(out: &mut dyn Write, name: &str, s: &RunSummary, files: &[PathBuf]) -> CliResult<()> {
    writeln!(out, "{name}: {}", s.classification).map_err(io)?;
    match s.t0 {
        Some(t0) => writeln!(out, "  t0            {t0}").map_err(io)?,
        None => writeln!(out, "  t0            -").map_err(io)?,
    }
    writeln!(
        out,
        "  norm          {:.4e} -> {:.4e} (max {:.4e})",
        s.initial_norm, s.final_norm, s.max_norm
    )
    .map_err(io)?;
    writeln!(out, "  tail rate     {:.4}", s.tail_rate).map_err(io)?;
    writeln!(out, "  under mu*M*Mbar {:.2}%", 100.0 * s.envelope_respect).map_err(io)?;
    for f in files {
        writeln!(out, "  wrote         {}", f.display()).map_err(io)?;
    }
    Ok(())
}

fn finish(s: &RunSummary) -> CliResult<()> {
    if s.classification == Classification::Diverged {
        return Err(CliError::Diverged(format!(
            "max norm {:.4e} from {:.4e}",
            s.max_norm, s.initial_norm
        )));
    }
    Ok(())
}

pub fn cmd_simulate(scenario: &Scenario, g: &GlobalArgs, out: &mut dyn Write) -> CliResult<()> {
    let prepared = scenario.prepare()?;
    warn_all(&prepared);
    strict_gate(&prepared, g)?;
    let traj = run(&prepared.config, prepared.controller)?;
    let analysis = analyze(&prepared, &traj)?;
    let summary = summarize(&traj);
    let files = write_outputs(scenario, &prepared, &traj, analysis, &g.out, &scenario.name)?;
    report_run(out, &scenario.name, &summary, &files)?;
    finish(&summary)
}

pub fn cmd_baseline(
    scenario: &Scenario,
    mu: Option<f64>,
    g: &GlobalArgs,
    out: &mut dyn Write,
) -> CliResult<()> {
    let prepared = scenario.prepare()?;
    warn_all(&prepared);
    let mu = match (mu, prepared.controller) {
        (Some(m), _) => m,
        (None, Controller::FixedMu(m)) => m,
        (None, _) => prepared.config.switching.mu0,
    };
    let traj = run(&prepared.config, Controller::FixedMu(mu))?;
    let analysis = analyze(&prepared, &traj)?;
    let summary = summarize(&traj);
    let stem = format!("{}.baseline", scenario.name);
    let files = write_outputs(scenario, &prepared, &traj, analysis, &g.out, &stem)?;
    writeln!(out, "fixed mu = {mu}").map_err(io)?;
    report_run(out, &scenario.name, &summary, &files)?;
    finish(&summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyItem {
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

pub fn verify_items(prepared: &Prepared) -> Vec<VerifyItem> {
    let cfg = &prepared.config;
    let c = &cfg.consts;
    let cond = prepared.condition;
    let mut items = vec![
        VerifyItem {
            check: match cfg.switching.mode {
                Mode::State => "state-quantization condition".into(),
                Mode::Input => "input-quantization condition".into(),
            },
            pass: cond.holds,
            detail: format!(
                "Delta/M = {:.4e}, bound {:.4e}, margin {:.4e}",
                cond.ratio, cond.bound, cond.margin
            ),
        },
        VerifyItem {
            check: "small-gain".into(),
            pass: c.small_gain_lhs < 1.0,
            detail: format!("lhs = {:.6} at lambda = {}", c.small_gain_lhs, c.lambda),
        },
    ];
    let scalar = validate_properties_grid(&cfg.quant, VERIFY_GRID_POINTS);
    items.push(VerifyItem {
        check: "quantizer P1-P3".into(),
        pass: scalar.holds(),
        detail: format!(
            "{} points, {} violations",
            scalar.samples,
            scalar.violations.len()
        ),
    });
    if cfg.switching.mode == Mode::State {
        let cells = cfg.u0.values.len();
        let channel = validate_state_channel(&cfg.quant, cfg.x0.len(), cells, 1000, 0, cfg.norm);
        items.push(VerifyItem {
            check: "state channel P1-P3".into(),
            pass: channel.holds(),
            detail: format!(
                "{} samples, {} violations",
                channel.samples,
                channel.violations.len()
            ),
        });
    }
    items
}

pub fn cmd_verify(scenario: &Scenario, out: &mut dyn Write) -> CliResult<()> {
    let prepared = scenario.prepare()?;
    warn_all(&prepared);
    let items = verify_items(&prepared);
    for it in &items {
        writeln!(
            out,
            "{:<4} {:<30} {}",
            if it.pass { "ok" } else { "FAIL" },
            it.check,
            it.detail
        )
        .map_err(io)?;
    }
    let failed: Vec<&str> = items
        .iter()
        .filter(|i| !i.pass)
        .map(|i| i.check.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Condition(format!(
            "failed: {}",
            failed.join(", ")
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()))
}

fn sweep_one(base: &Value, param: &str, value: Value) -> SweepRow {
    let mut row = SweepRow {
        value: value.clone(),
        classification: None,
        final_norm: None,
        lambda: None,
        lambda_min: None,
        condition_holds: None,
        error: None,
    };
    let attempt = || -> crate::error::Result<(Prepared, Trajectory)> {
        let mut v = base.clone();
        set_path(&mut v, param, value)?;
        let prepared = Scenario::from_value(v)?.prepare()?;
        let traj = run(&prepared.config, prepared.controller)?;
        Ok((prepared, traj))
    };
    match attempt() {
        Ok((prepared, traj)) => {
            row.classification = Some(classify_baseline(&traj));
            row.final_norm = Some(traj.final_norm());
            row.lambda = Some(prepared.config.consts.lambda);
            row.lambda_min = Some(prepared.config.consts.lambda_min);
            row.condition_holds = Some(prepared.condition.holds);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs in parallel; rows come back in the order of `values`.
pub fn sweep(base: &Scenario, param: &str, values: &[Value]) -> CliResult<Vec<SweepRow>> {
    let base = base.to_value()?;
    Ok(values
        .par_iter()
        .map(|v| sweep_one(&base, param, v.clone()))
        .collect())
}

pub fn cmd_sweep(
    base: &Scenario,
    param: &str,
    raw: &[String],
    g: &GlobalArgs,
    out: &mut dyn Write,
) -> CliResult<()> {
    let values: Vec<Value> = raw
        .iter()
        .filter(|r| !r.trim().is_empty())
        .map(|r| parse_value(r))
        .collect();
    if values.is_empty() {
        writeln!(out, "nothing to sweep").map_err(io)?;
        return Ok(());
    }
    let rows = sweep(base, param, &values)?;
    writeln!(
        out,
        "{:<16} {:<16} {:>12} {:>10} {:>10} {:>6}",
        param, "class", "final", "lambda", "lam_min", "cond"
    )
    .map_err(io)?;
    for r in &rows {
        match &r.error {
            Some(e) => writeln!(out, "{:<16} error: {e}", r.value.to_string()).map_err(io)?,
            None => writeln!(
                out,
                "{:<16} {:<16} {:>12.4e} {:>10.4} {:>10.4} {:>6}",
                r.value.to_string(),
                r.classification.map_or("-", |c| c.as_str()),
                r.final_norm.unwrap_or(f64::NAN),
                r.lambda.unwrap_or(f64::NAN),
                r.lambda_min.unwrap_or(f64::NAN),
                r.condition_holds
                    .map_or("-", |h| if h { "ok" } else { "fail" }),
            )
            .map_err(io)?,
        }
    }
    std::fs::create_dir_all(&g.out).map_err(io)?;
    let path = g.out.join(format!("{}.sweep.json", base.name));
    let doc = json!({ "param": param, "rows": rows });
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&doc).map_err(Error::from)?,
    )
    .map_err(io)?;
    writeln!(out, "wrote {}", path.display()).map_err(io)?;
    if g.strict && rows.iter().any(|r| r.condition_holds == Some(false)) {
        return Err(CliError::Condition(
            "theorem condition fails for some sweep values".into(),
        ));
    }
    Ok(())
}
