use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use super::{Controller, Trajectory};
use crate::error::Result;
use crate::predictor::DesignConstants;

pub const CSV_HEADER_PREFIX: &str = "t";

fn phase_label(traj: &Trajectory, phase: crate::switching::Phase) -> &'static str {
    match traj.controller {
        Controller::Switched => phase.as_str(),
        Controller::FixedMu(_) => "fixed",
        Controller::OpenLoop => "open_loop",
    }
}

/// `t, x1..xn, U, mu, phase, norm, envelope`.
pub fn write_csv(traj: &Trajectory, mut out: impl Write) -> Result<()> {
    let n = traj.samples.first().map_or(0, |s| s.x.len());
    let mut header = vec![CSV_HEADER_PREFIX.to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["U", "mu", "phase", "norm", "envelope"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for s in &traj.samples {
        let mut row = vec![format!("{}", s.t)];
        row.extend(s.x.iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", s.control));
        row.push(format!("{:e}", s.mu));
        row.push(phase_label(traj, s.phase).to_string());
        row.push(format!("{:e}", s.norm));
        row.push(format!("{:e}", s.envelope));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_csv_file(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(traj, file)
}

/// Run manifest: scenario echo, constants with provenance, run flags and
/// whatever analysis the caller attaches.
pub fn manifest(
    scenario: &Value,
    consts: &DesignConstants,
    traj: &Trajectory,
    analysis: Value,
) -> Value {
    json!({
        "scenario": scenario,
        "constants": consts.manifest(),
        "run": {
            "controller": traj.controller,
            "mode": traj.mode,
            "samples": traj.samples.len(),
            "dt": traj.dt,
            "dx": traj.dx,
            "t0": traj.t0,
            "stopped_early": traj.stopped_early,
            "initial_norm": traj.initial_norm(),
            "final_norm": traj.final_norm(),
        },
        "analysis": analysis,
    })
}
