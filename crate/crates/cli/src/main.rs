mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparserl::verify::{run_suite, Suite, VerifyOptions};
use sparserl::{Algorithm, Profile, TopologyMode};

/// Sparse-from-scratch actor-critic training, sweeps and self-checks.
#[derive(Parser, Debug)]
#[command(name = "sparserl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one training job and write its artifacts.
    Train(TrainArgs),
    /// Train over a grid of sparsities and seeds and pick the ultimate
    /// compression ratio.
    Sweep(SweepArgs),
    /// Run the built-in oracle suites.
    Verify(VerifyArgs),
}

/// Settings shared by `train` and `sweep`. Flags override the config file,
/// which overrides the profile defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct RunFlags {
    /// td3 or sac.
    #[arg(long)]
    pub algo: Option<Algorithm>,
    /// Environment name (pendulum, pointmass).
    #[arg(long)]
    pub env: Option<String>,
    /// rlx2, rigl, set, static_sparse, tiny_dense, static_mask or dense.
    #[arg(long)]
    pub topology: Option<TopologyMode>,
    #[arg(long)]
    pub actor_sparsity: Option<f64>,
    #[arg(long)]
    pub critic_sparsity: Option<f64>,
    /// Total environment steps.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat key=value file using the long flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// paper or desk.
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Directory of mask dumps for the static_mask topology.
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    /// Any other setting as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    flags: RunFlags,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Reproduce a previous run from its manifest.json.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    flags: RunFlags,
    /// Comma-separated sparsities applied to actor and critic alike.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Number of seeds per cell, counting up from --seed.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suite to run (gradient, decomposition, flops, conservation); all by
    /// default. May be repeated.
    #[arg(long)]
    suite: Vec<Suite>,
    /// Flip one mask bit after each evolution step in the conservation
    /// suite.
    #[arg(long)]
    inject_fault: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// How a command failed, mapped onto exit codes 2 and 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let suites: Vec<Suite> = if args.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suite.clone()
    };
    let opts = VerifyOptions {
        seed: args.seed,
        inject_fault: args.inject_fault,
    };
    let mut failed = Vec::new();
    for suite in suites {
        let r = run_suite(suite, &opts).map_err(|e| Failure::Run(e.into()))?;
        println!(
            "{:<14} {} checks={} failures={} max_error={:.3e} tolerance={:.1e} time={:.2}s {}",
            suite.name(),
            if r.passed { "PASS" } else { "FAIL" },
            r.checks,
            r.failures,
            r.max_error,
            r.tolerance,
            r.seconds,
            r.detail
        );
        if !r.passed {
            failed.push(suite.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(anyhow::anyhow!("failing suites: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Train(a) => run::cmd_train(&a.flags, &a.out, a.manifest.as_deref()),
        Command::Sweep(a) => sweep::cmd_sweep(&a.flags, &a.grid, a.seeds, a.jobs, &a.out),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
