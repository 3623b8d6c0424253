//! Run artifacts: trajectory and diagnostics tables, a machine-readable
//! report, optional field snapshots, and a standalone plot script. Numeric
//! columns carry 17 significant digits so seeded reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::ansatz::SpatialPoint;
use crate::config::{Cadence, SnapshotSpec};
use crate::error::{Result, SmsError};
use crate::scenarios::{Scenario, ScenarioReport};
use crate::stepper::{RunStatus, Trajectory};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| SmsError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Indices of the trajectory rows that survive the output cadence. Row 0 and
/// the final row are always kept.
fn cadence_indices(times: &[f64], cadence: &Cadence) -> Vec<usize> {
    let last = times.len() - 1;
    let mut keep: Vec<usize> = match (cadence.every, cadence.dt) {
        (Some(k), _) => (0..times.len()).step_by(k.max(1)).collect(),
        (None, Some(dt)) => {
            let mut next = times[0];
            let mut keep = Vec::new();
            for (i, &t) in times.iter().enumerate() {
                if t >= next - 1e-12 {
                    keep.push(i);
                    next = t + dt;
                }
            }
            keep
        }
        (None, None) => (0..times.len()).collect(),
    };
    if keep.last() != Some(&last) {
        keep.push(last);
    }
    keep
}

pub fn write_trajectory_csv(dir: &Path, traj: &Trajectory, cadence: &Cadence) -> Result<PathBuf> {
    let n = traj.states[0].len();
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",theta_{i}"));
    }
    out.push('\n');
    for &i in &cadence_indices(&traj.times, cadence) {
        out.push_str(&fmt(traj.times[i]));
        for v in &traj.states[i].values {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push('\n');
    }
    let path = dir.join("trajectory.csv");
    write_file(&path, &out)?;
    Ok(path)
}

pub fn write_diagnostics_csv(
    dir: &Path,
    traj: &Trajectory,
    n_quantities: usize,
    cadence: &Cadence,
) -> Result<PathBuf> {
    let mut out = String::from("t,residual_norm,cond_estimate,rejections");
    for i in 1..=n_quantities {
        out.push_str(&format!(",I_{i}"));
    }
    out.push('\n');
    // diagnostics start at the first accepted step; shift cadence rows by one
    let keep = cadence_indices(&traj.times, cadence);
    for &i in &keep {
        if i == 0 {
            continue;
        }
        let d = &traj.diagnostics[i - 1];
        out.push_str(&format!(
            "{},{},{},{}",
            fmt(d.t),
            fmt(d.residual),
            fmt(d.condition_estimate),
            d.step_rejections
        ));
        for v in &d.invariant_values {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push('\n');
    }
    let path = dir.join("diagnostics.csv");
    write_file(&path, &out)?;
    Ok(path)
}

pub fn write_snapshots_csv(
    dir: &Path,
    scenario: &Scenario,
    traj: &Trajectory,
    spec: &SnapshotSpec,
) -> Result<PathBuf> {
    let dim = scenario.family.dim();
    if spec.bounds.len() != dim {
        return Err(SmsError::config(
            "snapshot bounds must match the spatial dimension",
        ));
    }
    let mut out = String::from("t");
    for i in 1..=dim {
        out.push_str(&format!(",x_{i}"));
    }
    out.push_str(",u\n");
    for &t in &spec.times {
        // nearest stored state; snapshots are diagnostics, not dense output
        let idx = traj
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .ok_or_else(|| SmsError::numeric("empty trajectory"))?;
        let theta = &traj.states[idx];
        let t_actual = traj.times[idx];
        let mut coords = vec![0usize; dim];
        loop {
            let x: Vec<f64> = coords
                .iter()
                .zip(&spec.bounds)
                .map(|(&k, &(lo, hi))| {
                    lo + (hi - lo) * k as f64 / (spec.per_axis - 1) as f64
                })
                .collect();
            let point = SpatialPoint::new(x.clone())?;
            let u = scenario.family.eval(theta, &point)?;
            out.push_str(&fmt(t_actual));
            for xi in &x {
                out.push(',');
                out.push_str(&fmt(*xi));
            }
            out.push(',');
            out.push_str(&fmt(u));
            out.push('\n');
            // odometer over the grid
            let mut carry = true;
            for c in coords.iter_mut().rev() {
                if !carry {
                    break;
                }
                *c += 1;
                if *c == spec.per_axis {
                    *c = 0;
                } else {
                    carry = false;
                }
            }
            if carry {
                break;
            }
        }
    }
    let path = dir.join("field_snapshots.csv");
    write_file(&path, &out)?;
    Ok(path)
}

#[derive(Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub completed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureInfo>,
    pub checks: Vec<CheckLine>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub wall_time_seconds: f64,
    pub seed: u64,
    pub accepted_steps: usize,
}

#[derive(Serialize)]
pub struct FailureInfo {
    pub kind: String,
    pub last_good_t: f64,
}

#[derive(Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

pub fn build_report(
    scenario: &Scenario,
    traj: &Trajectory,
    checks: &ScenarioReport,
    failure: Option<FailureInfo>,
    wall_time_seconds: f64,
) -> RunReport {
    RunReport {
        scenario: scenario.id.name().to_string(),
        completed: traj.status == RunStatus::Completed && failure.is_none(),
        failure: failure.or(match traj.status {
            RunStatus::Completed => None,
            RunStatus::Stiffness { t } => Some(FailureInfo {
                kind: "stiffness".into(),
                last_good_t: t,
            }),
        }),
        checks: checks
            .checks
            .iter()
            .map(|c| CheckLine {
                name: c.name.clone(),
                passed: c.passed,
                measured: c.measured,
                threshold: c.threshold,
                detail: c.detail.clone(),
            })
            .collect(),
        final_time: *traj.times.last().unwrap_or(&f64::NAN),
        final_state: traj
            .states
            .last()
            .map(|s| s.values.clone())
            .unwrap_or_default(),
        wall_time_seconds,
        seed: scenario.seed,
        accepted_steps: traj.times.len().saturating_sub(1),
    }
}

pub fn write_report_json(dir: &Path, report: &RunReport) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| SmsError::numeric(format!("report serialization failed: {e}")))?;
    let path = dir.join("report.json");
    write_file(&path, &(text + "\n"))?;
    Ok(path)
}

/// Reads only the CSVs; deliberately has no dependency on this crate.
pub fn write_plot_script(dir: &Path) -> Result<PathBuf> {
    let script = r#"#!/usr/bin/env python3
"""Plot run artifacts (trajectory.csv, diagnostics.csv) from this directory.

Only needs numpy and matplotlib; run it next to the CSVs or pass a directory.
"""
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {name: [float(r[i]) for r in data] for i, name in enumerate(header)}
    return header, cols


def main():
    base = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
    header, cols = read_csv(os.path.join(base, "trajectory.csv"))
    t = cols["t"]
    fig, axes = plt.subplots(2, 1, figsize=(9, 8), sharex=True)
    for name in header[1:]:
        axes[0].plot(t, cols[name], lw=0.8, label=name)
    axes[0].set_ylabel("parameters")
    if len(header) <= 17:
        axes[0].legend(fontsize=7, ncol=4)

    diag_path = os.path.join(base, "diagnostics.csv")
    if os.path.exists(diag_path):
        dheader, dcols = read_csv(diag_path)
        dt = dcols["t"]
        for name in dheader:
            if name.startswith("I_"):
                series = dcols[name]
                ref = series[0] if series and series[0] != 0 else 1.0
                axes[1].plot(dt, [abs(v - series[0]) / abs(ref) for v in series],
                             lw=0.8, label=name + " drift")
        axes[1].plot(dt, dcols["residual_norm"], lw=0.8, ls="--", label="residual")
        axes[1].set_yscale("log")
        axes[1].legend(fontsize=7)
        axes[1].set_ylabel("relative drift / residual")
    axes[1].set_xlabel("t")
    out = os.path.join(base, "run.png")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main()
"#;
    let path = dir.join("plot.py");
    write_file(&path, script)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let _ = fs::set_permissions(&path, fs::Permissions::from_mode(0o755));
    }
    Ok(path)
}
