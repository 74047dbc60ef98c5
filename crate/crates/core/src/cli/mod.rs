//! Command-line runner: `run <config>`, `emit <figure> --out <dir>`,
//! `selfcheck`.
//!
//! Exit codes: 0 when every check holds, 2 when an inequality is violated,
//! 1 on configuration, solver or I/O errors.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::linalg::norm_p;
use crate::selfcheck::selfcheck;
use crate::verify::{default_huber_grid, run_bias_agreement, run_huber_comparison, run_lp_bound_check, ExperimentReport};
use config::{Experiment, RunConfig};
use output::{huber_csv, to_json, trajectory_csv, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

/// Overrides the directory that relative output paths resolve against.
pub const OUT_DIR_ENV: &str = "BREGFLOW_OUT_DIR";

pub const FIG1A_CONFIG: &str = include_str!("../../configs/fig1a.toml");
pub const FIG1B_CONFIG: &str = include_str!("../../configs/fig1b.toml");

#[derive(Debug, Parser)]
#[command(name = "bregflow", version, about = "Reparametrized gradient flow and its implicit bias")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Write figure data into a directory.
    Emit {
        figure: Figure,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant suite.
    Selfcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1a,
    Fig1b,
    Fig2,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.all_checks_pass() {
            EXIT_OK
        } else {
            EXIT_VIOLATION
        }
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    experiment: Experiment,
    error: &'a str,
}

#[derive(Serialize)]
struct LpBall<'a> {
    p: f64,
    /// `‖w̃_final‖_p`, the radius of the ℓ_p ball through the final iterate.
    lp_ball_radius: f64,
    mu: f64,
    lp_min: &'a [f64],
    final_w_tilde: &'a [f64],
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// The output directory: `$BREGFLOW_OUT_DIR` if set, else `default`.
pub fn output_dir(default: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => default.to_path_buf(),
    }
}

/// Executes a parsed config and writes its outputs. Solver failures are
/// written into the report file before being returned.
pub fn run_config(cfg: &RunConfig, base_dir: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let report_path = resolve(out_dir, &cfg.outputs.report_json);
    let result = execute(cfg, base_dir, out_dir);
    if let Err(e) = &result {
        let msg = format!("{e:#}");
        let bytes = to_json(&ErrorReport {
            experiment: cfg.experiment,
            error: &msg,
        })?;
        write_atomic(&report_path, &bytes)?;
    }
    result
}

fn execute(cfg: &RunConfig, base_dir: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let flow = cfg.flow_config()?;
    let (report, traj) = match cfg.experiment {
        Experiment::BiasAgreement => {
            let inst = cfg.instance(base_dir)?;
            run_bias_agreement(&inst, &flow, &cfg.oracle)?
        }
        Experiment::LpBound => {
            let a = cfg.matrix(base_dir)?;
            let p = cfg.reparam.p.context("reparam.p")?;
            let alphas = &cfg.lp_bound.as_ref().context("lp_bound section")?.alphas;
            run_lp_bound_check(p, &a, &cfg.y, alphas, cfg.loss()?, &flow, &cfg.oracle)?
        }
    };
    let mut written = Vec::new();
    let csv_path = resolve(out_dir, &cfg.outputs.trajectory_csv);
    write_atomic(&csv_path, &trajectory_csv(&traj)?)?;
    written.push(csv_path);
    let json_path = resolve(out_dir, &cfg.outputs.report_json);
    write_atomic(&json_path, &to_json(&report)?)?;
    written.push(json_path);
    if let (Some(dir), Some(lp)) = (&cfg.outputs.figure_data_dir, &report.lp) {
        let path = resolve(out_dir, dir).join("lp_ball.json");
        let ball = LpBall {
            p: lp.p,
            lp_ball_radius: norm_p(&report.final_w_tilde, lp.p),
            mu: lp.mu,
            lp_min: &lp.lp_min.z_star,
            final_w_tilde: &report.final_w_tilde,
        };
        write_atomic(&path, &to_json(&ball)?)?;
        written.push(path);
    }
    Ok(RunOutcome { report, written })
}

pub fn run_path(config_path: &Path) -> Result<RunOutcome> {
    let cfg = RunConfig::from_path(config_path)
        .with_context(|| format!("config {}", config_path.display()))?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let cwd = std::env::current_dir().context("current directory")?;
    run_config(&cfg, base_dir, &output_dir(&cwd))
}

/// Writes the data behind a figure into `out_dir`.
pub fn emit_figure(figure: Figure, out_dir: &Path) -> Result<Vec<PathBuf>> {
    match figure {
        Figure::Fig1a | Figure::Fig1b => {
            let text = if figure == Figure::Fig1a {
                FIG1A_CONFIG
            } else {
                FIG1B_CONFIG
            };
            let cfg = RunConfig::from_str(text)?;
            Ok(run_config(&cfg, out_dir, out_dir)?.written)
        }
        Figure::Fig2 => {
            let path = out_dir.join("fig2_huber.csv");
            let rows = run_huber_comparison(&default_huber_grid());
            write_atomic(&path, &huber_csv(&rows)?)?;
            Ok(vec![path])
        }
    }
}

fn report_line(report: &ExperimentReport) -> String {
    let mut s = format!(
        "{} family={} terminal={:?} steps={} final_loss={:e}",
        report.experiment, report.family, report.terminal, report.steps, report.final_loss
    );
    if let Some(a) = report.agreement_inf {
        s.push_str(&format!(" agreement_inf={a:e}"));
    }
    s.push_str(if report.all_checks_pass() {
        " checks=pass"
    } else {
        " checks=FAIL"
    });
    s
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_ERROR,
            };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    let code = match cli.command {
        Command::Run { config } => match run_path(&config) {
            Ok(outcome) => {
                println!("{}", report_line(&outcome.report));
                for n in &outcome.report.notes {
                    println!("note: {n}");
                }
                for p in &outcome.written {
                    println!("wrote {}", p.display());
                }
                outcome.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_ERROR
            }
        },
        Command::Emit { figure, out } => match emit_figure(figure, &out) {
            Ok(paths) => {
                for p in paths {
                    println!("wrote {}", p.display());
                }
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_ERROR
            }
        },
        Command::Selfcheck => {
            let items = selfcheck();
            let mut ok = true;
            for it in &items {
                println!("{} {}: {}", if it.passed { "PASS" } else { "FAIL" }, it.name, it.detail);
                ok &= it.passed;
            }
            if ok {
                EXIT_OK
            } else {
                EXIT_VIOLATION
            }
        }
    };
    eprintln!("elapsed {:.3}s", started.elapsed().as_secs_f64());
    code
}
