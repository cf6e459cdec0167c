use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use entrpo::config;
use entrpo::error::ConfigError;
use entrpo::metrics::{self, SweepPlan, OUT_ROOT_ENV};
use entrpo::{Algo, TrainConfig};

#[derive(Parser)]
#[command(name = "entrpo", version, about = "Trust-region policy optimization on cart-pole")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and write its run directory.
    Train(TrainArgs),
    /// Sweep both algorithms over discounts and seeds.
    Compare(CompareArgs),
    /// Check the tabular identities and bounds on random MDPs.
    Verify(VerifyArgs),
}

/// Settings shared by `train` and `compare`.
#[derive(Args)]
struct CommonArgs {
    /// `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    entropy_coef: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    epoch_min_timesteps: Option<usize>,
    #[arg(long)]
    kl_delta: Option<f64>,
    /// Root that relative output directories default under.
    #[arg(long, env = OUT_ROOT_ENV, default_value = "runs")]
    out_root: PathBuf,
}

impl CommonArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg = config::parse_into(cfg, &text).with_context(|| format!("in {}", path.display()))?;
        }
        if let Some(v) = self.entropy_coef {
            cfg.trust_region.entropy_coef = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.epoch_min_timesteps {
            cfg.epoch_min_timesteps = v;
        }
        if let Some(v) = self.kl_delta {
            cfg.trust_region.kl_delta = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long, value_parser = discount)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to `<out-root>/<algo>_gammaXXX_seedY`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.85,0.9", value_parser = discount)]
    gammas: Vec<f64>,
    /// Number of seeds, run as `0..seeds`.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1, value_parser = positive)]
    jobs: usize,
    /// Sweep directory; defaults to the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100, value_parser = positive)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn discount(s: &str) -> Result<f64, String> {
    let g: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if g > 0.0 && g < 1.0 {
        Ok(g)
    } else {
        Err(format!("{g} is outside (0, 1)"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("{s:?} is not a positive integer")),
    }
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let mut cfg = args.common.resolve()?;
    if let Some(a) = args.algo {
        cfg.algo = a;
    }
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = args.out.unwrap_or_else(|| args.common.out_root.join(metrics::run_id(&cfg)));
    let run = metrics::run_training(&cfg, &out)?;
    match run.epochs_to_solve() {
        Some(e) => println!("solved at epoch {e}; results in {}", out.display()),
        None => println!("not solved after {} epochs; results in {}", run.records.len(), out.display()),
    }
    if let Some(reason) = run.halted {
        eprintln!("halted: {reason}");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(args: CompareArgs) -> Result<ExitCode> {
    let base = args.common.resolve()?;
    let plan = SweepPlan {
        base,
        algos: vec![Algo::Trpo, Algo::Entrpo],
        gammas: args.gammas,
        seeds: args.seeds,
        jobs: args.jobs,
        out_root: args.out.unwrap_or(args.common.out_root),
    };
    let (_, summary) = metrics::run_compare(&plan)?;
    println!("{}", metrics::SUMMARY_HEADER);
    for row in &summary {
        println!("{}", row.to_csv());
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let report = metrics::run_verify(args.instances, args.seed)?;
    print!("{report}");
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn usage_exit(e: clap::Error) -> ! {
    if !e.use_stderr() {
        e.exit();
    }
    let _ = e.print();
    eprintln!("\n{}", Cli::command().render_usage());
    std::process::exit(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| usage_exit(e));
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Compare(a) => compare(a),
        Command::Verify(a) => verify(a),
    };
    result.unwrap_or_else(|e| {
        if let Some(c) = e.downcast_ref::<ConfigError>() {
            usage_exit(Cli::command().error(ErrorKind::ValueValidation, c));
        }
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
