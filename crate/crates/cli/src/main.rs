use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mmcl_cli::{run_batch, sample_transform, write_trace, BatchSummary};
use mmcl_core::trainer::{DEFAULT_EPS_TARGET, DEFAULT_EVAL_EVERY, DEFAULT_GROWTH_THRESHOLD};
use mmcl_core::{
    build_matmul_tensor, classify_run, decomposition_error, run_training, run_training_from, strassen_fixture,
    transform_decomposition, Outcome, RunConfig, UpdateMode, WeightSet,
};
use nalgebra::DMatrix;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "mmcl",
    version,
    about = "Train multiplier networks to decompose the matrix-multiplication tensor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its trace.
    Train(TrainArgs),
    /// Train an ensemble of independently seeded networks.
    Batch(BatchArgs),
    /// Report ε and the largest weight of a weight file.
    Verify(VerifyArgs),
    /// Apply a random (or identity) symmetry transform to a weight file.
    Transform(TransformArgs),
    /// Write Strassen's rank-7 weights for 2 × 2 matrices.
    Fixture(FixtureArgs),
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Update rule for the output multiplier.
    #[arg(long, default_value = "cg1")]
    mode: UpdateMode,
    /// Stop once ε drops below this value.
    #[arg(long, default_value_t = DEFAULT_EPS_TARGET)]
    eps_target: f64,
    /// Evaluate ε every this many items.
    #[arg(long, default_value_t = DEFAULT_EVAL_EVERY)]
    eval_every: u64,
    /// Initial weights are uniform on [-init_scale, init_scale].
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    /// Weight growth needed to label a non-converged run border-suspect.
    #[arg(long, default_value_t = DEFAULT_GROWTH_THRESHOLD)]
    growth_threshold: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_items: u64,
    #[command(flatten)]
    run: RunFlags,
    /// Trace output (JSON lines).
    #[arg(long, default_value = "trace.jsonl")]
    trace: PathBuf,
    /// Write the final weights here.
    #[arg(long)]
    weights_out: Option<PathBuf>,
    /// Start from these weights instead of a random draw.
    #[arg(long)]
    init_weights: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    /// Required unless --full is given (which defaults to 3).
    #[arg(long)]
    n: Option<usize>,
    /// Required unless --full is given (which defaults to 23).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Run i uses seed master_seed + i.
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_items: u64,
    /// 1000 runs of 10^8 items each.
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    run: RunFlags,
    /// Concurrent runs; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for summary.csv, histogram.csv and (with --traces) per-run traces.
    #[arg(long, default_value = "batch_out")]
    out_dir: PathBuf,
    /// Also write traces/run_NNNN.jsonl for every run.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 1e-12)]
    threshold: f64,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use U = V = X = I.
    #[arg(long, conflicts_with = "inverse")]
    identity: bool,
    /// Apply the inverse of the transform sampled for --seed.
    #[arg(long)]
    inverse: bool,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value = "strassen.json")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Batch(args) => cmd_batch(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Transform(args) => cmd_transform(args),
        Command::Fixture(args) => cmd_fixture(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run_config(n: usize, rank: usize, seed: u64, max_items: u64, flags: &RunFlags) -> RunConfig {
    RunConfig {
        eps_target: flags.eps_target,
        eval_every: flags.eval_every,
        init_scale: flags.init_scale,
        mode: flags.mode,
        ..RunConfig::new(n, rank, seed, max_items)
    }
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let cfg = run_config(args.n, args.rank, args.seed, args.max_items, &args.run);
    cfg.validate()?;
    let (weights, mut trace) = match &args.init_weights {
        Some(path) => {
            let init = WeightSet::load(path).with_context(|| format!("loading {}", path.display()))?;
            run_training_from(&cfg, init)?
        }
        None => run_training(&cfg)?,
    };
    trace.classification = classify_run(&trace, args.run.growth_threshold);

    write_trace(&args.trace, &trace.samples)?;
    if let Some(path) = &args.weights_out {
        weights
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("final_epsilon: {:e}", trace.final_epsilon);
    println!("items_used: {}", trace.items_used);
    println!("max_weight: {}", trace.final_max_weight);
    println!("weight_growth_factor: {}", trace.weight_growth_factor);
    println!("skipped: {}", trace.skipped_count);
    println!("classification: {}", trace.classification);
    Ok(match trace.outcome {
        Outcome::Converged => EXIT_OK,
        Outcome::NonConverged => EXIT_NOT_CONVERGED,
    })
}

fn cmd_batch(args: BatchArgs) -> Result<u8> {
    let (n, rank, runs, max_items) = if args.full {
        (args.n.unwrap_or(3), args.rank.unwrap_or(23), 1000, 100_000_000)
    } else {
        let (Some(n), Some(rank)) = (args.n, args.rank) else {
            bail!("--n and --rank are required unless --full is given");
        };
        (n, rank, args.runs, args.max_items)
    };
    if runs == 0 {
        bail!("--runs must be at least 1");
    }
    let template = run_config(n, rank, args.master_seed, max_items, &args.run);
    template.validate()?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));

    let mut traces = run_batch(&template, runs, args.master_seed, jobs)?;
    for t in &mut traces {
        t.classification = classify_run(t, args.run.growth_threshold);
    }

    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    if args.traces {
        let dir = args.out_dir.join("traces");
        std::fs::create_dir_all(&dir)?;
        for (i, t) in traces.iter().enumerate() {
            write_trace(&dir.join(format!("run_{i:04}.jsonl")), &t.samples)?;
        }
    }
    let summary = BatchSummary::from_traces(&traces);
    summary.write_summary(&args.out_dir.join("summary.csv"))?;
    summary.write_histogram(&args.out_dir.join("histogram.csv"))?;

    for row in &summary.rows {
        println!(
            "run {:>4} seed {:>6}: epsilon {:.3e} items {} growth {:.3} {}",
            row.run_id, row.seed, row.final_epsilon, row.items_used, row.weight_growth_factor, row.classification
        );
    }
    println!(
        "converged_fraction: {} ({}/{})",
        summary.converged_fraction, summary.converged_count, summary.runs
    );
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let w = WeightSet::load(&args.weights).with_context(|| format!("loading {}", args.weights.display()))?;
    let t = build_matmul_tensor(w.n())?;
    let eps = decomposition_error(&w, &t)?;
    println!("n: {} r: {}", w.n(), w.r());
    println!("epsilon: {eps:e}");
    println!("max_weight: {}", w.max_abs());
    Ok(if eps < args.threshold {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn cmd_transform(args: TransformArgs) -> Result<u8> {
    let w = WeightSet::load(&args.weights).with_context(|| format!("loading {}", args.weights.display()))?;
    let n = w.n();
    let (u, v, x) = if args.identity {
        let id = DMatrix::identity(n, n);
        (id.clone(), id.clone(), id)
    } else {
        let (u, v, x) = sample_transform(n, args.seed);
        if args.inverse {
            let inv = |m: DMatrix<f64>| m.try_inverse().context("sampled transform is singular");
            (inv(u)?, inv(v)?, inv(x)?)
        } else {
            (u, v, x)
        }
    };
    let out = transform_decomposition(&w, &u, &v, &x)?;
    let t = build_matmul_tensor(n)?;
    println!("epsilon_before: {:e}", decomposition_error(&w, &t)?);
    println!("epsilon_after: {:e}", decomposition_error(&out, &t)?);
    out.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(EXIT_OK)
}

fn cmd_fixture(args: FixtureArgs) -> Result<u8> {
    let w = strassen_fixture();
    let eps = decomposition_error(&w, &build_matmul_tensor(2)?)?;
    if eps > 1e-15 {
        bail!("fixture failed self-check: epsilon = {eps:e}");
    }
    w.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} (epsilon {eps:e})", args.out.display());
    Ok(EXIT_OK)
}
