//! `zonepred`: simulate, ingest, bench and report.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 when some
//! variants of a grid failed while the others completed.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use zonepred_core::bench::{filter_variants, run_grid, VariantSpec};
use zonepred_core::bundle::{best_per_family, read_summary, write_bundle};
use zonepred_core::plant::Scenario;
use zonepred_core::series::{ingest_csv, resample, SeriesSet};

use config::RunConfig;

const DATA_FILE: &str = "data.csv";

#[derive(Parser, Debug)]
#[command(name = "zonepred", version, about = "Zone temperature prediction benchmarks")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the grid.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic building data set.
    Simulate {
        /// light, heavy, noiseless or drifting.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        days: Option<usize>,
        /// Share of steps turned into GAP.
        #[arg(long)]
        gap_fraction: Option<f64>,
    },
    /// Read a telemetry CSV onto the uniform grid.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        dt_minutes: Option<u32>,
        /// Grid of the raw file when it is finer than the target.
        #[arg(long)]
        raw_dt_minutes: Option<u32>,
    },
    /// Run the variant grid on a data set and write a report bundle.
    Bench {
        data: PathBuf,
        /// Comma-separated families, variant names or name prefixes.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        eval_stride: Option<usize>,
        #[arg(long)]
        sigma_min_every: Option<usize>,
        #[arg(long)]
        keep_predictions: bool,
    },
    /// Print the ranked summary of a report bundle.
    Report {
        bundle: PathBuf,
        /// Show the best variant of each family, at most N rows.
        #[arg(long)]
        top: Option<usize>,
    },
}

enum Failure {
    Config(String),
    Partial(String),
}

fn config_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let jobs = cli.jobs.or(cfg.jobs).unwrap_or(1);
    let out = cli.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Simulate {
            preset,
            days,
            gap_fraction,
        } => simulate(&cfg, seed, &out, preset, days, gap_fraction),
        Command::Ingest {
            input,
            dt_minutes,
            raw_dt_minutes,
        } => ingest(&cfg, &out, &input, dt_minutes, raw_dt_minutes),
        Command::Bench {
            data,
            variants,
            eval_stride,
            sigma_min_every,
            keep_predictions,
        } => {
            let mut cfg = cfg;
            if !variants.is_empty() {
                cfg.bench.variants = variants;
            }
            let h = &mut cfg.bench.harness;
            h.jobs = jobs;
            if cli.seed.is_some() || cfg.seed.is_some() {
                h.distortion_seed = seed;
            }
            if let Some(s) = eval_stride {
                h.eval_stride = s;
            }
            if let Some(s) = sigma_min_every {
                h.sigma_min_every = s;
            }
            h.keep_predictions |= keep_predictions;
            bench(&cfg, &out, &data)
        }
        Command::Report { bundle, top } => report(&bundle, top),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(config_err)?;
    fs::write(path, text + "\n").map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

fn series_stats(s: &SeriesSet) -> serde_json::Value {
    json!({
        "steps": s.len(),
        "dt_seconds": s.dt(),
        "start": zonepred_core::series::format_timestamp(s.t0()),
        "gap_steps": s.gap_steps(),
        "gap_cells": s.gap_cells(),
        "missing_fraction": s.missing_fraction(),
        "channels": s.schema().channels(),
    })
}

fn simulate(
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    preset: Option<String>,
    days: Option<usize>,
    gap_fraction: Option<f64>,
) -> Result<(), Failure> {
    let sim = &cfg.simulate;
    let name = preset.or(sim.preset.clone()).unwrap_or_else(|| "light".into());
    let mut scenario = Scenario::preset(&name, seed).map_err(config_err)?;
    if let Some(d) = days.or(sim.days) {
        scenario.days = d;
    }
    if let Some(g) = gap_fraction.or(sim.gap_fraction) {
        scenario.gap_fraction = g;
    }
    if let Some(m) = sim.mean_gap_len {
        scenario.mean_gap_len = m;
    }
    scenario.dt = cfg.dt_seconds();
    let series = scenario.generate().map_err(config_err)?;
    fs::create_dir_all(out).map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    series.save_csv(out.join(DATA_FILE)).map_err(config_err)?;
    let scenario_json: serde_json::Value = serde_json::from_str(&scenario.to_json().map_err(config_err)?).map_err(config_err)?;
    write_json(
        &out.join("scenario.json"),
        &json!({ "scenario": scenario_json, "series": series_stats(&series) }),
    )?;
    println!(
        "wrote {} steps to {} ({:.1} % of steps missing)",
        series.len(),
        out.join(DATA_FILE).display(),
        100.0 * series.missing_fraction()
    );
    Ok(())
}

/// Column names after the timestamp column.
fn csv_header(path: &Path) -> Result<Vec<String>, Failure> {
    use std::io::BufRead;
    let file = fs::File::open(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut line = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(line
        .trim_end()
        .split(',')
        .skip(1)
        .map(|s| s.trim().trim_matches('"').to_string())
        .collect())
}

fn ingest(
    cfg: &RunConfig,
    out: &Path,
    input: &Path,
    dt_minutes: Option<u32>,
    raw_dt_minutes: Option<u32>,
) -> Result<(), Failure> {
    let dt = dt_minutes.map_or(cfg.dt_seconds(), |m| i64::from(m) * 60);
    let raw_dt = raw_dt_minutes
        .or(cfg.ingest.raw_dt_minutes)
        .map_or(dt, |m| i64::from(m) * 60);
    let schema = cfg.schema_for(&csv_header(input)?).map_err(Failure::Config)?;
    let raw = ingest_csv(input, &schema, raw_dt, cfg.ingest.bounds).map_err(config_err)?;
    let series = if raw_dt == dt { raw } else { resample(&raw, dt).map_err(config_err)? };
    fs::create_dir_all(out).map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    series.save_csv(out.join(DATA_FILE)).map_err(config_err)?;
    write_json(
        &out.join("ingest.json"),
        &json!({ "source": input.display().to_string(), "series": series_stats(&series) }),
    )?;
    println!(
        "wrote {} steps to {} ({:.1} % of steps missing)",
        series.len(),
        out.join(DATA_FILE).display(),
        100.0 * series.missing_fraction()
    );
    Ok(())
}

fn bench(cfg: &RunConfig, out: &Path, data: &Path) -> Result<(), Failure> {
    let schema = cfg.schema_for(&csv_header(data)?).map_err(Failure::Config)?;
    let series = ingest_csv(data, &schema, cfg.dt_seconds(), Default::default()).map_err(config_err)?;
    let specs = filter_variants(&VariantSpec::full_grid(), &cfg.bench.variants);
    if specs.is_empty() {
        return Err(Failure::Config("no variants selected".into()));
    }
    let phases = cfg.bench.phases.to_steps(&series).map_err(config_err)?;
    let harness = &cfg.bench.harness;
    log::info!("running {} variants on {} steps", specs.len(), series.len());
    let outcome = run_grid(&series, &specs, &phases, harness).map_err(config_err)?;
    let meta = json!({
        "data": data.display().to_string(),
        "series": series_stats(&series),
        "variant_filter": cfg.bench.variants,
        "phase_days": cfg.bench.phases,
        "phase_steps": phases,
        "harness": harness,
        "seeds": { "distortion": harness.distortion_seed },
        "selection_window": "initialization and horizon steps compared",
        "solver": "Cholesky factorization of the weighted ridge normal equations (primal or dual)",
    });
    write_bundle(out, &outcome, meta, harness.utc_offset_hours).map_err(config_err)?;
    for r in outcome.ranked() {
        println!("{:<45} {:.4}", r.name(), r.rmse);
    }
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = outcome.failures.iter().map(|(v, e)| format!("{v}: {e}")).collect();
        Err(Failure::Partial(format!("{} variant(s) failed: {}", names.len(), names.join("; "))))
    }
}

fn report(bundle: &Path, top: Option<usize>) -> Result<(), Failure> {
    let rows = read_summary(bundle).map_err(|e| Failure::Config(format!("corrupt bundle {}: {e}", bundle.display())))?;
    let rows = match top {
        Some(n) => {
            let mut best = best_per_family(&rows);
            best.sort_by(|a, b| a.rmse.total_cmp(&b.rmse));
            best.truncate(n);
            best
        }
        None => rows,
    };
    println!("{:>4}  {:<45} {:<13} {:>9} {:>9}", "rank", "variant", "family", "rmse_K", "instants");
    for (i, r) in rows.iter().enumerate() {
        println!(
            "{:>4}  {:<45} {:<13} {:>9.4} {:>9}",
            i + 1,
            r.variant,
            r.family.name(),
            r.rmse,
            r.instants
        );
    }
    Ok(())
}
