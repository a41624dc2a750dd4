//! `ttrec`: shape planning, initializer statistics, training, cache
//! simulation, benchmarks and checkpoint inspection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use ttrec_core::init::{product_distribution_histogram, DEFAULT_THRESHOLD};
use ttrec_core::shape::{KAGGLE_COL_FACTORS, KAGGLE_EMB_DIM, KAGGLE_TABLES};
use ttrec_core::{
    plan_shapes, Checkpoint, DType, InitKind, InitSpec, RejectionMode, ScalingMode, ShapePlan,
};
use ttrec_harness::bench::{bench_pooling, write_bench_csv, BenchConfig};
use ttrec_harness::cache_sim::{cache_sim, write_cache_sim_csv, CacheSimConfig};
use ttrec_harness::{ConfigFile, HarnessError, RunConfig, TrainOptions};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Harness(#[from] HarnessError),

    #[error(transparent)]
    Core(#[from] ttrec_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use ttrec_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Harness(
                HarnessError::InvalidConfig(_)
                | HarnessError::ConfigSyntax { .. }
                | HarnessError::ConfigValue { .. },
            ) => 2,
            CliError::Harness(HarnessError::Core(E::InvalidShape(_) | E::InvalidInit(_)))
            | CliError::Core(E::InvalidShape(_) | E::InvalidInit(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "ttrec",
    version,
    about = "Tensor-train compressed embedding tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print TT core shapes, parameter count and memory reduction.
    Plan(PlanArgs),
    /// Histogram of the product of d initializer entries, as CSV.
    InitStats(InitStatsArgs),
    /// Train the harness model from a config file; writes metrics CSV.
    Train(TrainArgs),
    /// Replay a Zipf stream through an LFU cache; writes hit-rate CSV.
    CacheSim(CacheSimArgs),
    /// Forward+backward timing over pooling factors and ranks; writes CSV.
    Bench(BenchArgs),
    /// Print a checkpoint header as JSON.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Emit the seven Kaggle tables (all ranks unless --rank is given).
    #[arg(long, conflicts_with_all = ["rows", "row_factors", "col_factors", "dim", "tt_dim"])]
    table2: bool,
    #[arg(long, required_unless_present = "table2")]
    rows: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    tt_dim: Option<usize>,
    #[arg(long, required_unless_present = "table2")]
    rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    row_factors: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    col_factors: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct InitStatsArgs {
    /// `sampled-gaussian`, `kl-gaussian`, `uniform`, `uniform:LOW,HIGH` or `gaussian:MEAN,VAR`.
    #[arg(long, default_value = "sampled-gaussian")]
    spec: String,
    /// Embedding width n; sets the default target variance 1/(3n).
    #[arg(long, default_value_t = 16)]
    fan_in: usize,
    /// Number of factors in the product.
    #[arg(long, default_value_t = 3)]
    tt_dim: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Target variance for sampled-gaussian; defaults to 1/(3n).
    #[arg(long)]
    target: Option<f64>,
    #[arg(long, default_value = "moment-corrected")]
    scaling: ScalingMode,
    /// Reject only `x <= threshold`, keeping the positive tail.
    #[arg(long)]
    alg3_literal: bool,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Histogram range `LOW,HIGH`; defaults to the sample range.
    #[arg(long, value_name = "LOW,HIGH")]
    range: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for embedding kernels; 1 is bit-deterministic.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Override a config entry, e.g. `--set tables.rank=16`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "f32")]
    dtype: DType,
    /// Metrics CSV path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Fill the ms_per_iter column (makes the CSV non-reproducible).
    #[arg(long)]
    record_timing: bool,
    /// Generate batches on a producer thread.
    #[arg(long)]
    prefetch: bool,
}

#[derive(Debug, Args)]
struct CacheSimArgs {
    #[arg(long, default_value_t = 1.05)]
    zipf_s: f64,
    #[arg(long, default_value_t = 1_000_000)]
    rows: u64,
    /// Cache capacity as a percentage of rows.
    #[arg(long, default_value_t = 0.01)]
    capacity_pct: f64,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pooling: usize,
    #[arg(long, default_value_t = ttrec_core::cache::DEFAULT_WARMUP_FRACTION)]
    warmup_fraction: f64,
    #[arg(long, default_value_t = ttrec_core::cache::DEFAULT_REFRESH_PERIOD)]
    refresh_period: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pooling: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    ranks: Vec<usize>,
    #[arg(long)]
    rows: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    zipf_s: Option<f64>,
    #[arg(long)]
    micro_batch: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write through `f` to `path`, or to stdout when no path is given.
fn with_output(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(io_err(p))
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w)
                .and_then(|_| w.flush())
                .map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn shape_text(plan: &ShapePlan, k: usize) -> String {
    let s = plan.core_shape(k);
    format!("{}x{}x{}x{}", s[0], s[1], s[2], s[3])
}

fn cmd_plan(a: PlanArgs) -> Result<()> {
    if a.table2 {
        let ranks = match a.rank {
            Some(r) => vec![r],
            None => vec![16, 32, 64],
        };
        let mut lines = vec!["rows,dim,rank,core1,core2,core3,params,reduction".to_string()];
        for &rank in &ranks {
            for (rows, factors) in KAGGLE_TABLES {
                let plan = plan_shapes(
                    rows,
                    KAGGLE_EMB_DIM,
                    3,
                    rank,
                    Some(&factors),
                    Some(&KAGGLE_COL_FACTORS),
                )?;
                lines.push(format!(
                    "{rows},{KAGGLE_EMB_DIM},{rank},{},{},{},{},{}",
                    shape_text(&plan, 0),
                    shape_text(&plan, 1),
                    shape_text(&plan, 2),
                    plan.parameter_count(),
                    plan.memory_reduction()
                ));
            }
        }
        return with_output(None, |w| lines.iter().try_for_each(|l| writeln!(w, "{l}")));
    }
    let rows = a.rows.expect("clap requires rows");
    let rank = a.rank.expect("clap requires rank");
    let dim = a.dim.unwrap_or(16);
    let tt_dim = a
        .tt_dim
        .or(a.row_factors.as_ref().map(Vec::len))
        .or(a.col_factors.as_ref().map(Vec::len))
        .unwrap_or(3);
    let plan = plan_shapes(
        rows,
        dim,
        tt_dim,
        rank,
        a.row_factors.as_deref(),
        a.col_factors.as_deref(),
    )?;
    with_output(None, |w| {
        for k in 0..plan.tt_dim() {
            writeln!(w, "core{}={}", k + 1, shape_text(&plan, k))?;
        }
        writeln!(
            w,
            "params={} reduction={}",
            plan.parameter_count(),
            plan.memory_reduction()
        )
    })
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let bad = || CliError::Usage(format!("{what}: expected two numbers 'A,B', got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn init_spec(a: &InitStatsArgs) -> Result<InitSpec> {
    let n = a.fan_in;
    let (name, params) = match a.spec.split_once(':') {
        Some((name, p)) => (name, Some(p)),
        None => (a.spec.as_str(), None),
    };
    let kind = match (name, params) {
        ("uniform", None) => InitSpec::uniform_default(n).kind,
        ("uniform", Some(p)) => {
            let (low, high) = parse_pair(p, "--spec uniform")?;
            InitKind::Uniform { low, high }
        }
        ("gaussian", Some(p)) => {
            let (mean, variance) = parse_pair(p, "--spec gaussian")?;
            InitKind::Gaussian { mean, variance }
        }
        ("kl-gaussian", None) => InitSpec::kl_gaussian(n).kind,
        ("sampled-gaussian", None) => InitKind::SampledGaussian {
            threshold: a.threshold,
            target_variance: a.target.unwrap_or(1.0 / (3.0 * n as f64)),
            scaling: a.scaling,
            rejection: if a.alg3_literal {
                RejectionMode::OneSided
            } else {
                RejectionMode::TwoSided
            },
        },
        _ => {
            return Err(CliError::Usage(format!(
                "unknown --spec '{}' (sampled-gaussian, kl-gaussian, uniform[:LOW,HIGH], gaussian:MEAN,VAR)",
                a.spec
            )))
        }
    };
    let spec = InitSpec { kind, fan_in: n };
    spec.validate()?;
    Ok(spec)
}

fn cmd_init_stats(a: InitStatsArgs) -> Result<()> {
    let spec = init_spec(&a)?;
    let range = a
        .range
        .as_deref()
        .map(|r| parse_pair(r, "--range"))
        .transpose()?;
    log::info!("histogram of {} over {} samples", spec, a.samples);
    let hist = product_distribution_histogram(&spec, a.tt_dim, a.samples, a.bins, range, a.seed)?;
    with_output(a.out.as_deref(), |w| hist.write_csv(w))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).map_err(io_err(&a.config))?;
    let mut file = ConfigFile::parse(&text)?;
    for o in &a.overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("--set expects SECTION.KEY=VALUE, got '{o}'"))
        })?;
        let (section, key) = key.split_once('.').ok_or_else(|| {
            CliError::Usage(format!("--set expects SECTION.KEY=VALUE, got '{o}'"))
        })?;
        file.set(section.trim(), key.trim(), value.trim());
    }
    for (section, key, value) in [
        ("train", "seed", a.seed.map(|v| v.to_string())),
        ("model", "threads", a.threads.map(|v| v.to_string())),
        ("train", "iterations", a.iterations.map(|v| v.to_string())),
        ("train", "lr", a.lr.map(|v| v.to_string())),
    ] {
        if let Some(v) = value {
            file.set(section, key, v);
        }
    }
    let config = RunConfig::from_file(&file)?;
    let options = TrainOptions {
        record_timing: a.record_timing,
        prefetch: a.prefetch,
    };
    let (metrics, checkpoint) = match a.dtype {
        DType::F32 => {
            let (model, m) = ttrec_harness::run::<f32>(&config, options)?;
            (
                m,
                a.checkpoint
                    .is_some()
                    .then(|| model.to_checkpoint())
                    .transpose()?,
            )
        }
        DType::F64 => {
            let (model, m) = ttrec_harness::run::<f64>(&config, options)?;
            (
                m,
                a.checkpoint
                    .is_some()
                    .then(|| model.to_checkpoint())
                    .transpose()?,
            )
        }
    };
    with_output(a.out.as_deref(), |w| metrics.write_csv(w))?;
    if let (Some(path), Some(c)) = (&a.checkpoint, checkpoint) {
        c.save(path)?;
    }
    if let Some(eval) = metrics.eval {
        log::info!(
            "held-out loss {:.5} accuracy {:.4}",
            eval.loss,
            eval.accuracy()
        );
    }
    Ok(())
}

fn cmd_cache_sim(a: CacheSimArgs) -> Result<()> {
    let cfg = CacheSimConfig {
        rows: a.rows,
        zipf_s: a.zipf_s,
        capacity_pct: a.capacity_pct,
        iterations: a.iters,
        batch_size: a.batch_size,
        pooling: a.pooling,
        warmup_fraction: a.warmup_fraction,
        refresh_period: a.refresh_period,
        seed: a.seed,
    };
    let records = cache_sim(&cfg)?;
    with_output(a.out.as_deref(), |w| write_cache_sim_csv(&records, w))
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let d = BenchConfig::default();
    let cfg = BenchConfig {
        rows: a.rows.unwrap_or(d.rows),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        reps: a.reps.unwrap_or(d.reps),
        warmup: a.warmup.unwrap_or(d.warmup),
        zipf_s: a.zipf_s.unwrap_or(d.zipf_s),
        micro_batch: a.micro_batch.unwrap_or(d.micro_batch),
        threads: a.threads.unwrap_or(d.threads),
        seed: a.seed,
        ..d
    };
    let rows = bench_pooling(&cfg, &a.pooling, &a.ranks)?;
    with_output(a.out.as_deref(), |w| write_bench_csv(&rows, w))
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let json = serde_json::to_string_pretty(&checkpoint.header()).expect("header serializes");
    with_output(None, |w| writeln!(w, "{json}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TTREC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::InitStats(a) => cmd_init_stats(a),
        Command::Train(a) => cmd_train(a),
        Command::CacheSim(a) => cmd_cache_sim(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
