//! `contentflow`: run the end-to-end scenario or the two-link load sweep.
//!
//! Exit status: 0 on success, 1 when a scenario check fails, 2 on usage,
//! configuration or I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use contentflow::netmodel::load_topology;
use contentflow::scenario::{run_scenario, ScenarioOptions};
use contentflow::simeval::{alpha_grid, sweep_alpha, SweepTable};
use contentflow::{Controller, ControllerConfig};

#[derive(Parser)]
#[command(version, about = "Content-aware SDN controller simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boot a topology, fetch one content twice and check every step.
    Scenario {
        #[arg(long)]
        topology: PathBuf,
        /// Controller config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the JSON transcript.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the two link-assignment policies across Pareto shapes.
    Sweep {
        #[arg(long, default_value_t = 1.1)]
        alpha_min: f64,
        #[arg(long, default_value_t = 2.5)]
        alpha_max: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha_step: f64,
        #[arg(long, default_value_t = 0.95)]
        rho: f64,
        #[arg(long, default_value_t = 10_000)]
        horizon: u64,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        seed_base: u64,
        /// Per-(alpha, seed) CSV; the per-alpha summary goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failures the caller should see as a usage/config problem.
struct ConfigFailure(anyhow::Error);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scenario { topology, config, out } => scenario(&topology, config.as_deref(), &out),
        Command::Sweep { alpha_min, alpha_max, alpha_step, rho, horizon, seeds, seed_base, out } => {
            sweep(alpha_min, alpha_max, alpha_step, rho, horizon, seeds, seed_base, &out).map(|()| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(ConfigFailure(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for ConfigFailure {
    fn from(e: E) -> Self {
        ConfigFailure(e.into())
    }
}

#[derive(Serialize)]
struct ScenarioSummary<'a> {
    passed: bool,
    content_name: &'a str,
    stored_size_bytes: u64,
    serving_cache: Option<&'a str>,
    hit_path_links: &'a [String],
    origin_bytes_first_request: u64,
    origin_bytes_second_request: u64,
    first_failure: Option<&'a str>,
}

fn scenario(topology: &Path, config: Option<&Path>, out: &Path) -> Result<bool, ConfigFailure> {
    let doc = fs::read_to_string(topology).with_context(|| format!("reading {}", topology.display()))?;
    let graph = load_topology(&doc).with_context(|| format!("loading {}", topology.display()))?;
    let cfg = match config {
        Some(p) => {
            let doc = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ControllerConfig::from_json(&doc).with_context(|| format!("loading {}", p.display()))?
        }
        None => ControllerConfig::default(),
    };
    let report = run_scenario(Controller::new(graph, cfg), &ScenarioOptions::default())?;
    let transcript = serde_json::to_string_pretty(&report.transcript).context("serializing transcript")?;
    fs::write(out, transcript + "\n").with_context(|| format!("writing {}", out.display()))?;

    let summary = ScenarioSummary {
        passed: report.passed,
        content_name: &report.content_name,
        stored_size_bytes: report.stored_size_bytes,
        serving_cache: report.serving_cache.as_ref().map(|c| c.as_str()),
        hit_path_links: &report.hit_path_links,
        origin_bytes_first_request: report.origin_bytes_first_request,
        origin_bytes_second_request: report.origin_bytes_second_request,
        first_failure: report.first_failure.as_ref().map(|f| f.assertion.as_str()),
    };
    println!("{}", serde_json::to_string(&summary).context("serializing summary")?);
    if let Some(f) = &report.first_failure {
        eprintln!("step {} failed: {}", f.step, f.assertion);
    }
    Ok(report.passed)
}

/// `<dir>/<stem>_summary.csv` next to `out`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    out.with_file_name(format!("{stem}_summary.csv"))
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    alpha_min: f64,
    alpha_max: f64,
    alpha_step: f64,
    rho: f64,
    horizon: u64,
    seeds: u64,
    seed_base: u64,
    out: &Path,
) -> Result<(), ConfigFailure> {
    check_sweep_args(alpha_min, alpha_max, alpha_step, horizon, seeds)?;
    let alphas = alpha_grid(alpha_min, alpha_max, alpha_step);
    let seed_list: Vec<u64> = (0..seeds).map(|i| seed_base + i).collect();
    let table = sweep_alpha(&alphas, rho, horizon, &seed_list)?;
    write_sweep(&table, out)?;
    println!("alpha,mean_gain_pct,min_gain_pct,max_gain_pct");
    for s in &table.summary {
        println!("{:.1},{:.3},{:.3},{:.3}", s.alpha, s.mean_gain_pct, s.min_gain_pct, s.max_gain_pct);
    }
    println!("overall mean gain {:.3}%, max per-alpha mean {:.3}%", table.overall_mean_gain(), table.max_mean_gain());
    Ok(())
}

fn check_sweep_args(alpha_min: f64, alpha_max: f64, alpha_step: f64, horizon: u64, seeds: u64) -> Result<()> {
    if alpha_min.is_nan() || alpha_min <= 1.0 {
        bail!("--alpha-min must exceed 1, got {alpha_min}");
    }
    if alpha_max.is_nan() || alpha_max < alpha_min {
        bail!("--alpha-max ({alpha_max}) is below --alpha-min ({alpha_min})");
    }
    if alpha_step.is_nan() || alpha_step <= 0.0 {
        bail!("--alpha-step must be positive");
    }
    if horizon == 0 || seeds == 0 {
        bail!("--horizon and --seeds must be positive");
    }
    Ok(())
}

fn write_sweep(table: &SweepTable, out: &Path) -> Result<()> {
    let mut rows = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    for r in &table.rows {
        rows.serialize(r)?;
    }
    rows.flush()?;
    let path = summary_path(out);
    let mut summary = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for s in &table.summary {
        summary.serialize(s)?;
    }
    summary.flush()?;
    Ok(())
}
