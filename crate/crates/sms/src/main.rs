//! Command line front end. Exit codes: 0 run done and every check passed,
//! 2 run done but a check failed, 3 configuration error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use sms::config::{self, RunConfig};
use sms::error::SmsError;
use sms::output::{self, FailureInfo};
use sms::scenarios::{self, Scenario, ScenarioId, ScenarioReport};
use sms::stepper::{RunStatus, Trajectory};

#[derive(Parser)]
#[command(name = "sms", about = "Shape-morphing PDE solver", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured setup and write artifacts.
    Run {
        config: PathBuf,
        /// Output directory (overrides run.out_dir; default ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs when the config expands to several setups.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List the named setups.
    ListScenarios,
    /// Parse and validate a configuration without running it.
    Check { config: PathBuf },
    /// Echo the effective configuration with every default filled in.
    RenderConfig { config: PathBuf },
}

const EXIT_CHECK_FAILED: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, jobs } => cmd_run(&config, out, jobs),
        Command::ListScenarios => {
            for id in ScenarioId::all() {
                println!("{}", id.name());
            }
            0
        }
        Command::Check { config } => cmd_check(&config),
        Command::RenderConfig { config } => match load(&config) {
            Ok(cfg) => match config::render_config(&cfg) {
                Ok(text) => {
                    print!("{text}");
                    0
                }
                Err(e) => fail(&e),
            },
            Err(e) => fail(&e),
        },
    };
    ExitCode::from(code)
}

fn fail(e: &SmsError) -> u8 {
    eprintln!("error: {e}");
    match e {
        SmsError::Config(_) | SmsError::Input(_) | SmsError::Capability(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn load(path: &Path) -> Result<RunConfig, SmsError> {
    let text = std::fs::read_to_string(path).map_err(|source| SmsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    config::parse_config(&text)
}

fn cmd_check(path: &Path) -> u8 {
    let cfg = match load(path) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    // materialize every setup the config expands to, but run nothing
    for variant in match expand(&cfg) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    } {
        if let Err(e) = config::build_scenario(&variant) {
            return fail(&e);
        }
    }
    println!("ok");
    0
}

/// `scenario = "all"` fans out to one config per named setup.
fn expand(cfg: &RunConfig) -> Result<Vec<RunConfig>, SmsError> {
    if cfg.run.scenario.as_deref() != Some("all") {
        return Ok(vec![cfg.clone()]);
    }
    Ok(ScenarioId::all()
        .iter()
        .map(|id| {
            let mut c = cfg.clone();
            c.run.scenario = Some(id.name().to_string());
            c
        })
        .collect())
}

fn cmd_run(path: &Path, out: Option<PathBuf>, jobs: usize) -> u8 {
    let cfg = match load(path) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    let variants = match expand(&cfg) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let base = out
        .or_else(|| cfg.run.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let multi = variants.len() > 1;
    let work: Vec<(RunConfig, PathBuf)> = variants
        .into_iter()
        .map(|v| {
            let dir = if multi {
                base.join(v.run.scenario.as_deref().unwrap_or("custom"))
            } else {
                base.clone()
            };
            (v, dir)
        })
        .collect();
    let codes: Vec<u8> = if jobs > 1 && work.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| {
            use rayon::prelude::*;
            work.par_iter().map(|(v, dir)| run_one(v, dir)).collect()
        })
    } else {
        work.iter().map(|(v, dir)| run_one(v, dir)).collect()
    };
    codes.into_iter().max().unwrap_or(0)
}

fn run_one(cfg: &RunConfig, dir: &Path) -> u8 {
    if let Err(e) = std::fs::create_dir_all(dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return EXIT_NUMERIC;
    }
    let scenario = match config::build_scenario(cfg) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    // every implicit default, made visible next to the artifacts
    if let Ok(text) = config::render_config(cfg) {
        let _ = std::fs::write(dir.join("effective_config.toml"), text);
    }
    let started = Instant::now();
    let label = cfg.run.scenario.as_deref().unwrap_or("custom");
    let (traj, checks, failure) = match scenarios::run(&scenario) {
        Ok((traj, checks)) => {
            let failure = match traj.status {
                RunStatus::Completed => None,
                RunStatus::Stiffness { t } => Some(FailureInfo {
                    kind: "stiffness".into(),
                    last_good_t: t,
                }),
            };
            (traj, checks, failure)
        }
        Err(e) => {
            // hard failure before any step was accepted; still emit artifacts
            eprintln!("{label}: {e}");
            let traj = Trajectory {
                times: vec![scenario.stepper.t_span.0],
                states: vec![scenario.theta0.clone()],
                diagnostics: vec![],
                status: RunStatus::Completed,
            };
            let checks = ScenarioReport {
                scenario: label.to_string(),
                completed: false,
                checks: vec![],
            };
            let failure = Some(FailureInfo {
                kind: failure_kind(&e).to_string(),
                last_good_t: scenario.stepper.t_span.0,
            });
            (traj, checks, failure)
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let failed = failure.is_some();
    if let Err(e) = write_artifacts(cfg, dir, &scenario, &traj, &checks, failure, wall) {
        eprintln!("error: {e}");
        return EXIT_NUMERIC;
    }
    for c in &checks.checks {
        println!(
            "{label}: {} {} (measured {:.3e}, threshold {:.3e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    if failed {
        EXIT_NUMERIC
    } else if checks.all_passed() {
        println!("{label}: completed in {wall:.2}s, all checks passed");
        0
    } else {
        println!("{label}: completed in {wall:.2}s, some checks FAILED");
        EXIT_CHECK_FAILED
    }
}

fn failure_kind(e: &SmsError) -> &'static str {
    match e {
        SmsError::Stiffness { .. } => "stiffness",
        SmsError::Numeric(_) => "numeric",
        SmsError::Io { .. } => "io",
        _ => "config",
    }
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    cfg: &RunConfig,
    dir: &Path,
    scenario: &Scenario,
    traj: &Trajectory,
    checks: &ScenarioReport,
    failure: Option<FailureInfo>,
    wall: f64,
) -> Result<(), SmsError> {
    output::write_trajectory_csv(dir, traj, &cfg.run.cadence)?;
    let nq = scenario.monitors.len() + scenario.constraints.len();
    output::write_diagnostics_csv(dir, traj, nq, &cfg.run.cadence)?;
    if let Some(spec) = &cfg.snapshots {
        output::write_snapshots_csv(dir, scenario, traj, spec)?;
    }
    let report = output::build_report(scenario, traj, checks, failure, wall);
    output::write_report_json(dir, &report)?;
    output::write_plot_script(dir)?;
    Ok(())
}
