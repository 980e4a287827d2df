//! The `jump-mppi` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::controller::{mppi_iteration, ControllerState};
use crate::error::{Error, Result};
use crate::harness::{run_batch, run_trial, Variant, REAL_TIME_BUDGET_S};
use crate::io::{
    ensure_dir, load_config, write_bench_csv, write_trajectory_csv, ExperimentConfig, SummaryRow, SummaryWriter,
    SweepCell,
};
use crate::noise::NoiseSampler;
use crate::types::{validate_config, ControlSequence, MppiConfig};

pub const THREADS_ENV: &str = "JUMP_MPPI_THREADS";

#[derive(Debug, Parser)]
#[command(name = "jump-mppi", version, about = "MPPI control under jump-diffusion noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Old,
    New,
    Both,
}

impl VariantArg {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            VariantArg::Old => vec![Variant::Old],
            VariantArg::New => vec![Variant::New],
            VariantArg::Both => vec![Variant::Old, Variant::New],
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Both)]
    pub variant: VariantArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every sweep cell and write summary and trajectory CSVs.
    Run(CommonArgs),
    /// One trial of the first sweep cell with a per-step CSV.
    Single(CommonArgs),
    /// Check the config and every cell's invariants without running trials.
    Validate(CommonArgs),
    /// Per-iteration wall-time distribution of the first sweep cell.
    Bench(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Run(a) | Command::Single(a) | Command::Validate(a) | Command::Bench(a) => a,
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    ConfigError = 1,
    RuntimeError = 2,
}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&args.config)?;
    if let Some(t) = args.trials {
        if t == 0 {
            return Err(Error::Config("--trials must be at least 1".into()));
        }
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

/// Checks every cell's controller config, noise factors and cost model, and
/// that a noise-free rollout from the initial state is finite.
pub fn validate(cfg: &ExperimentConfig) -> Result<Vec<MppiConfig>> {
    let model = cfg.task.model()?;
    let mut out = Vec::new();
    for cell in cfg.cells() {
        let mcfg = validate_config(cfg.mppi_config(&cell))?;
        if mcfg.control_dim() != model.control_dim() {
            return Err(Error::Config(format!(
                "u_init has length {}, task has {} controls",
                mcfg.control_dim(),
                model.control_dim()
            )));
        }
        NoiseSampler::from_config(&mcfg)?;
        NoiseSampler::plant(&mcfg)?;
        let cost = cfg.task.cost_model(&mcfg, cfg.mppi.control_weight)?;
        let nominal = ControlSequence::constant(&mcfg.u_init, mcfg.horizon_n, mcfg.dt);
        let noise = crate::types::NoiseRealization::zeros(mcfg.horizon_n, mcfg.control_dim());
        let r = crate::dynamics::rollout(
            model.as_ref(),
            &ControllerState::new(mcfg.clone())?.integrator(),
            &cfg.task.initial_state(),
            &nominal,
            &noise,
            &cost,
        )?;
        if !r.cost.is_finite() {
            return Err(Error::Config(format!("noise-free rollout of cell {} diverges", cell.id())));
        }
        out.push(mcfg);
    }
    Ok(out)
}

fn trajectory_path(dir: &Path, cfg: &ExperimentConfig, cell: &SweepCell, v: Variant) -> PathBuf {
    dir.join(format!("{}_{}_{}.csv", cfg.task.name(), cell.id(), v.name()))
}

/// Runs the full sweep. Summary rows are flushed cell by cell, so a failure
/// leaves the completed cells on disk.
pub fn run(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<SummaryRow>> {
    let traj_dir = cfg.output_dir.join("trajectories");
    ensure_dir(&traj_dir)?;
    let mut writer = SummaryWriter::create(&cfg.output_dir.join("summary.csv"))?;
    let mut rows = Vec::new();
    for cell in cfg.cells() {
        let mcfg = cfg.mppi_config(&cell);
        let batches = run_batch(
            &cfg.task,
            &mcfg,
            cfg.mppi.control_weight,
            variants,
            cfg.trials,
            cfg.seed,
            &cell.id(),
        )?;
        for b in &batches {
            let row = SummaryRow::from_batch(&cfg.task, cell, cfg.seed, b, cfg.record_timing);
            writer.write(&row)?;
            write_trajectory_csv(&cfg.task, &b.records, &trajectory_path(&traj_dir, cfg, &cell, b.variant))?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// One trial per variant of the first cell, written to `single_<variant>.csv`.
pub fn single(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<(Variant, bool, PathBuf)>> {
    ensure_dir(&cfg.output_dir)?;
    let cell = cfg.cells()[0];
    let base = cfg.mppi_config(&cell);
    variants
        .iter()
        .map(|&v| {
            let rec = run_trial(&cfg.task, &v.apply(&base), cfg.mppi.control_weight, cfg.seed, &cell.id())?;
            let path = cfg.output_dir.join(format!("single_{}.csv", v.name()));
            write_trajectory_csv(&cfg.task, std::slice::from_ref(&rec), &path)?;
            Ok((v, rec.success, path))
        })
        .collect()
}

/// Order statistics of per-iteration wall times, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub iterations: usize,
    pub min_ms: f64,
    pub p10_ms: f64,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
    pub over_budget: usize,
}

impl BenchReport {
    pub fn from_times(times_s: &[f64]) -> Option<Self> {
        if times_s.is_empty() {
            return None;
        }
        let mut ms: Vec<f64> = times_s.iter().map(|t| t * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let q = |p: f64| ms[((ms.len() - 1) as f64 * p).round() as usize];
        Some(BenchReport {
            iterations: ms.len(),
            min_ms: ms[0],
            p10_ms: q(0.1),
            median_ms: q(0.5),
            p90_ms: q(0.9),
            p99_ms: q(0.99),
            max_ms: ms[ms.len() - 1],
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            over_budget: times_s.iter().filter(|&&t| t > REAL_TIME_BUDGET_S).count(),
        })
    }

    pub fn within_budget(&self) -> bool {
        self.median_ms <= REAL_TIME_BUDGET_S * 1e3
    }
}

/// Times `iterations` warm-started MPPI updates from the initial state of the
/// first cell and writes `bench.csv`.
pub fn bench(cfg: &ExperimentConfig, variant: Variant, iterations: usize) -> Result<BenchReport> {
    ensure_dir(&cfg.output_dir)?;
    let cell = cfg.cells()[0];
    let mcfg = variant.apply(&cfg.mppi_config(&cell));
    let model = cfg.task.model()?;
    let cost = cfg.task.cost_model(&mcfg, cfg.mppi.control_weight)?;
    let x0 = cfg.task.initial_state();
    let mut ctrl = ControllerState::new(mcfg)?;
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let started = std::time::Instant::now();
        let (updated, _) = mppi_iteration(&ctrl, model.as_ref(), &cost, &x0, cfg.seed)?;
        times.push(started.elapsed().as_secs_f64());
        ctrl.advance(updated);
    }
    write_bench_csv(&times, &cfg.output_dir.join("bench.csv"))?;
    BenchReport::from_times(&times).ok_or_else(|| Error::Config("bench needs at least one iteration".into()))
}

/// Applies `JUMP_MPPI_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer (got `{raw}`)")))?;
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

const BENCH_ITERATIONS: usize = 200;

/// Runs a parsed command line and reports its exit status.
pub fn execute(cli: &Cli) -> Exit {
    let args = cli.command.args();
    let cfg = match configure_threads().and_then(|_| resolve_config(args)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Exit::ConfigError;
        }
    };
    if let Err(e) = validate(&cfg) {
        eprintln!("error: {e}");
        return Exit::ConfigError;
    }
    let variants = args.variant.variants();
    let outcome = match &cli.command {
        Command::Validate(_) => {
            println!("ok: {} task, {} cells", cfg.task.name(), cfg.cells().len());
            Ok(())
        }
        Command::Run(_) => run(&cfg, &variants).map(|rows| {
            for r in &rows {
                println!(
                    "{} nu={} sigma_j={} M={} {}: success {:.3}",
                    r.task,
                    r.cell.nu,
                    r.cell.sigma_j,
                    r.cell.samples_m,
                    r.variant.name(),
                    r.success_rate
                );
            }
            println!("wrote {}", cfg.output_dir.join("summary.csv").display());
        }),
        Command::Single(_) => single(&cfg, &variants).map(|done| {
            for (v, ok, path) in done {
                println!("{}: success={ok} -> {}", v.name(), path.display());
            }
        }),
        Command::Bench(_) => {
            let v = *variants.last().expect("at least one variant");
            bench(&cfg, v, BENCH_ITERATIONS).map(|r| {
                println!(
                    "iterations {} min {:.3} p10 {:.3} median {:.3} p90 {:.3} p99 {:.3} max {:.3} mean {:.3} ms; over budget {}",
                    r.iterations, r.min_ms, r.p10_ms, r.median_ms, r.p90_ms, r.p99_ms, r.max_ms, r.mean_ms, r.over_budget
                );
                if !r.within_budget() {
                    eprintln!(
                        "warning: median iteration {:.3} ms exceeds the {:.0} ms real-time budget",
                        r.median_ms,
                        REAL_TIME_BUDGET_S * 1e3
                    );
                }
            })
        }
    };
    match outcome {
        Ok(()) => Exit::Ok,
        Err(e) => {
            eprintln!("error: {e}");
            Exit::RuntimeError
        }
    }
}
