//! `scenegram`: sample, corrupt, infer, condition, learn, evaluate.
//!
//! Exit codes: 0 success, 2 validation error, 3 capacity exceeded,
//! 4 inference did not converge (outputs are still written).

mod commands;
mod config;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use scenegram::bp::Schedule;
use scenegram::factorgraph::{CompileError, VariableBudgetExceeded};

use commands::{Ctx, EvalMode, EvidenceArgs, Status};
use config::{Config, Overrides};

#[derive(Parser)]
#[command(name = "scenegram", version, about = "Probabilistic scene grammars with loopy belief propagation")]
struct Cli {
    /// TOML file overriding the defaults (see --show-config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,
    /// Worker threads for LBP and EM; 0 uses every core. Default 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the compiled factor graph as text to this path.
    #[arg(long, global = true)]
    dump_graph: Option<PathBuf>,
    /// `synchronous-flood` or `factor-sweep`.
    #[arg(long, global = true, value_parser = parse_schedule)]
    schedule: Option<Schedule>,
    #[arg(long, global = true)]
    damping: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw scenes; writes scene text files and one graymap per symbol.
    Sample {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Add Gaussian pixel noise to a binary map (dark pixels are set).
    Corrupt {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run LBP with image and/or score evidence and optional clamps.
    Infer {
        #[arg(long)]
        grammar: PathBuf,
        /// Noisy graymap giving evidence for --image-symbol.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value = "J")]
        image_symbol: String,
        /// CSV with columns symbol,x,y,orientation,scale,score.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// CSV with columns symbol,slope,offset (Platt parameters).
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// `SYM@x,y[,o,s][:0|1]`; repeatable.
        #[arg(long)]
        clamp: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Clamp bricks present and report the belief modes of one symbol.
    Condition {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long, required = true)]
        clamp: Vec<String>,
        #[arg(long)]
        symbol: String,
        /// Half-width of the mode window.
        #[arg(long, default_value_t = 1)]
        radius: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// EM on scene files (`*.txt`) with observed symbols clamped.
    Learn {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        training_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Observed symbols; default every symbol without rules. Repeatable.
        #[arg(long)]
        observe: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// PR-AUC of a belief graymap, or localization error of belief CSV.
    Eval {
        #[arg(long)]
        beliefs: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "pr-auc")]
        mode: EvalMode,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Synthetic curve detection: grammar vs no-context AUC per image.
    Benchmark {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    match s {
        "synchronous-flood" => Ok(Schedule::SynchronousFlood),
        "factor-sweep" => Ok(Schedule::FactorSweep),
        other => Err(format!("unknown schedule `{other}` (synchronous-flood, factor-sweep)")),
    }
}

fn run(cli: Cli) -> Result<Status> {
    let overrides = Overrides {
        schedule: cli.schedule,
        damping: cli.damping,
        max_iters: cli.max_iters,
        tolerance: cli.tolerance,
        threads: cli.threads,
    };
    let config = Config::load(cli.config.as_deref(), &overrides)?;
    if cli.show_config {
        print!("{}", config.to_toml());
        return Ok(Status::Ok);
    }
    if config.bp.threads != 1 {
        rayon::ThreadPoolBuilder::new().num_threads(config.bp.threads).build_global()?;
    }
    let ctx = Ctx { config: &config, dump_graph: cli.dump_graph.as_deref() };
    let Some(command) = cli.command else {
        anyhow::bail!("no command given; see --help");
    };
    match command {
        Command::Sample { grammar, count, seed, out_dir } => commands::sample(&ctx, &grammar, count, seed, &out_dir),
        Command::Corrupt { map, seed, out_dir } => commands::corrupt(&ctx, &map, seed, &out_dir),
        Command::Infer { grammar, image, image_symbol, scores, calibration, clamp, out_dir } => {
            let ev = EvidenceArgs {
                image: image.as_deref(),
                image_symbol: &image_symbol,
                scores: scores.as_deref(),
                calibration: calibration.as_deref(),
            };
            commands::infer(&ctx, &grammar, &ev, &clamp, &out_dir)
        }
        Command::Condition { grammar, clamp, symbol, radius, out_dir } => {
            commands::condition(&ctx, &grammar, &clamp, &symbol, radius, &out_dir)
        }
        Command::Learn { grammar, training_dir, iters, observe, out_dir } => {
            commands::learn(&ctx, &grammar, &training_dir, iters, &observe, &out_dir)
        }
        Command::Eval { beliefs, truth, mode, out_dir } => commands::eval(&ctx, &beliefs, &truth, mode, &out_dir),
        Command::Benchmark { grammar, count, seed, out_dir } => commands::benchmark(&ctx, &grammar, count, seed, &out_dir),
    }
}

fn is_capacity(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.is::<CompileError>() || c.is::<VariableBudgetExceeded>())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_capacity(&e) { 3 } else { 2 })
        }
    }
}
