use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neuralrs::harness::{
    read_config, run_batch, write_results, AggregatedResult, EnvKind, ExperimentConfig, HarnessError, Hyperparams,
    PolicyKind, PolicySpec, DESK_RUNS, FULL_RUNS,
};
use neuralrs::ReliabilityKind;

/// Satisficing contextual-bandit experiments.
#[derive(Debug, Parser)]
#[command(name = "bandit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or more policies on one environment.
    Run(RunArgs),
    /// Run a multi-policy suite described by a config file.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output directory from the file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_env)]
    env: EnvKind,
    /// Policy kind; a comma-separated list runs several side by side.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_policy)]
    policy: Vec<PolicyKind>,
    /// Reliability estimator for NeuralRS; a list runs one NeuralRS per estimator.
    #[arg(long, value_delimiter = ',', value_parser = parse_reliability)]
    reliability: Vec<ReliabilityKind>,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    /// Defaults to 10, or 100 with --full.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    aleph: Option<f64>,
    #[arg(long, env = "BANDIT_SHUTTLE_PATH")]
    shuttle_path: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Full-scale profile (100 runs).
    #[arg(long)]
    full: bool,
    /// Leave the forced warmup pulls out of cumulative regret.
    #[arg(long)]
    exclude_warmup: bool,
}

fn parse_env(s: &str) -> Result<EnvKind, String> {
    s.parse()
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

fn parse_reliability(s: &str) -> Result<ReliabilityKind, String> {
    s.parse()
}

fn config_from_args(args: RunArgs) -> ExperimentConfig {
    let mut hyper = Hyperparams::default();
    if let Some(aleph) = args.aleph {
        hyper.aleph = aleph;
    }
    let reliabilities = if args.reliability.is_empty() {
        vec![hyper.reliability]
    } else {
        args.reliability.clone()
    };
    let mut policies = Vec::new();
    for kind in args.policy {
        if kind == PolicyKind::NeuralRs {
            for &rel in &reliabilities {
                policies.push(PolicySpec::new(kind, Hyperparams { reliability: rel, ..hyper.clone() }));
            }
        } else {
            policies.push(PolicySpec::new(kind, hyper.clone()));
        }
    }
    ExperimentConfig {
        env: args.env,
        policies,
        steps: args.steps,
        runs: args.runs.unwrap_or(if args.full { FULL_RUNS } else { DESK_RUNS }),
        seed: args.seed,
        hyper,
        shuttle_path: args.shuttle_path,
        out_dir: Some(args.out),
        warmup_in_regret: !args.exclude_warmup,
        ..ExperimentConfig::default()
    }
}

fn print_summary(results: &[AggregatedResult]) {
    println!(
        "{:<20} {:>6} {:>14} {:>10} {:>10} {:>10}",
        "policy", "runs", "final_regret", "stderr", "accuracy", "trailing"
    );
    for r in results {
        println!(
            "{:<20} {:>6} {:>14.2} {:>10.2} {:>10.4} {:>10.4}",
            r.policy, r.runs_ok, r.final_regret_mean, r.final_regret_stderr, r.final_accuracy_mean, r.trailing_accuracy_mean
        );
        for f in &r.failures {
            eprintln!("  run {} (seed {}) failed: {}", f.run, f.seed, f.reason);
        }
    }
}

fn execute(cfg: ExperimentConfig) -> Result<(), HarnessError> {
    let results = run_batch(&cfg)?;
    print_summary(&results);
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let written = write_results(&results, &cfg, &out)?;
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match cli.command {
        Command::Run(args) => Ok(config_from_args(args)),
        Command::Compare { config, out } => read_config(&config).map(|mut cfg| {
            if out.is_some() {
                cfg.out_dir = out;
            }
            cfg
        }),
    };
    match cfg.and_then(execute) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
