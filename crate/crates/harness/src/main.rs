use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnaopt_harness::config::{Algorithm, ExperimentConfig};
use rnaopt_harness::runner::{
    fold_lines, run_ablation_loop, run_ablation_reward, run_experiment, seed_dir,
    FoldBackend, HarnessError,
};

/// RNA sequence optimization experiments: DQN, PPO, and a greedy
/// baseline over a folding-energy fitness.
#[derive(Parser)]
#[command(name = "rnaopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm and write metrics.csv / summary.json per seed
    Run(RunArgs),
    /// Paired DQN runs: plain reward vs visit-count penalty
    AblateReward(RunArgs),
    /// Paired PPO runs: terminate-on-revisit vs try-again
    AblateLoop(RunArgs),
    /// Fold sequences and print structure, energy, and fitness
    Fold(FoldArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm: dqn, ppo, or greedy
    #[arg(long)]
    algo: Option<String>,
    /// Sequence length
    #[arg(long)]
    len: Option<usize>,
    /// RNG seed; repeat the flag for multi-seed runs
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Fitness-evaluation budget per run
    #[arg(long)]
    budget: Option<u64>,
    /// Revisit handling: terminate, try-again, or reward-penalty
    #[arg(long)]
    loop_policy: Option<String>,
    /// Redraw attempts per step under try-again
    #[arg(long)]
    max_iter: Option<usize>,
    /// Penalty weight under reward-penalty
    #[arg(long)]
    alpha_penalty: Option<f64>,
    /// Objective backend: builtin or external
    #[arg(long)]
    fitness: Option<String>,
    /// Command line for the external folding program
    #[arg(long)]
    external_cmd: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seeds on separate threads
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct FoldArgs {
    /// Sequences over the A/C/G/U alphabet
    #[arg(required = true)]
    sequences: Vec<String>,
    /// Objective backend: builtin or external
    #[arg(long)]
    fitness: Option<String>,
    /// Command line for the external folding program
    #[arg(long)]
    external_cmd: Option<String>,
}

/// Defaults, then the config file, then flags; later sources win.
/// `default_algo` seeds the algorithm before either is applied, so the
/// ablation subcommands get their required algorithm unless the user
/// explicitly picks one.
fn resolve(args: &RunArgs, default_algo: Option<Algorithm>) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::default();
    if let Some(algo) = default_algo {
        config.algorithm = algo;
    }
    if let Some(path) = &args.config {
        let body = std::fs::read_to_string(path)?;
        config.apply_file(&body)?;
    }
    if let Some(algo) = &args.algo {
        config.set("algo", algo)?;
    }
    if let Some(len) = args.len {
        config.set("len", &len.to_string())?;
    }
    if !args.seeds.is_empty() {
        config.seeds = args.seeds.clone();
    }
    if let Some(budget) = args.budget {
        config.set("budget", &budget.to_string())?;
    }
    if let Some(policy) = &args.loop_policy {
        config.set("loop-policy", policy)?;
    }
    if let Some(max_iter) = args.max_iter {
        config.set("max-iter", &max_iter.to_string())?;
    }
    if let Some(alpha) = args.alpha_penalty {
        config.set("alpha-penalty", &format!("{alpha:?}"))?;
    }
    if let Some(fitness) = &args.fitness {
        config.set("fitness", fitness)?;
    }
    if let Some(cmd) = &args.external_cmd {
        config.set("external-cmd", cmd)?;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if args.parallel {
        config.parallel = true;
    }
    Ok(config)
}

fn fold_backend(
    fitness: &Option<String>,
    external_cmd: &Option<String>,
) -> Result<FoldBackend, HarnessError> {
    let mut config = ExperimentConfig::default();
    if let Some(cmd) = external_cmd {
        config.set("external-cmd", cmd)?;
    }
    if let Some(f) = fitness {
        config.set("fitness", f)?;
    }
    config.validate()?;
    FoldBackend::from_config(&config.fitness)
}

fn main_inner() -> Result<(), HarnessError> {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = resolve(&args, None)?;
            let results = run_experiment(&config)?;
            for (seed, metrics) in &results {
                println!(
                    "{} seed {seed}: best {:?} after {} evaluations -> {}",
                    config.algorithm,
                    metrics.best_fitness.unwrap_or(f64::NEG_INFINITY),
                    metrics.total_evals,
                    seed_dir(&config, *seed).display()
                );
            }
        }
        Command::AblateReward(args) => {
            let config = resolve(&args, Some(Algorithm::Dqn))?;
            let report = run_ablation_reward(&config)?;
            for arm in &report.arms {
                println!(
                    "{} median best {:?} over {} seeds",
                    arm.name,
                    arm.median_final_best.unwrap_or(f64::NEG_INFINITY),
                    arm.runs.len()
                );
            }
        }
        Command::AblateLoop(args) => {
            let config = resolve(&args, Some(Algorithm::Ppo))?;
            let report = run_ablation_loop(&config)?;
            for arm in &report.arms {
                println!(
                    "{} median best {:?} over {} seeds",
                    arm.name,
                    arm.median_final_best.unwrap_or(f64::NEG_INFINITY),
                    arm.runs.len()
                );
            }
        }
        Command::Fold(args) => {
            let backend = fold_backend(&args.fitness, &args.external_cmd)?;
            for line in fold_lines(&backend, &args.sequences)? {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
