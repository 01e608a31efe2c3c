//! Dispatches configured experiments to the optimizers and writes the
//! result files. All runs stop at the shared fitness-evaluation budget,
//! which is the only unit that compares algorithms fairly.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rnaopt_core::dqn::run_dqn;
use rnaopt_core::env::EnvError;
use rnaopt_core::fitness::{
    ExternalModel, FitnessError, FitnessModel, FoldResult, NussinovModel,
};
use rnaopt_core::greedy::run_greedy;
use rnaopt_core::metrics::{median, RunMetrics};
use rnaopt_core::ppo::run_ppo;
use rnaopt_core::seq::RnaSequence;
use serde::Serialize;
use thiserror::Error;

use crate::config::{
    Algorithm, ConfigError, ExperimentConfig, FitnessBackend, LoopChoice,
};
use crate::output::{
    write_metrics_csv, write_report_json, write_scatter_csv, write_summary_json, RunSummary,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fitness backend unavailable: {0}")]
    Backend(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for a missing
    /// fitness backend, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Backend(_) => 3,
            _ => 1,
        }
    }
}

fn lift_fitness(e: FitnessError) -> HarnessError {
    match e {
        FitnessError::ProgramUnavailable { .. } => HarnessError::Backend(e.to_string()),
        other => HarnessError::Run(other.to_string()),
    }
}

fn lift_env(e: EnvError) -> HarnessError {
    match e {
        EnvError::Fitness(f) => lift_fitness(f),
        other => HarnessError::Run(other.to_string()),
    }
}

/// The objective implementation plus the ability to fold a sequence for
/// reporting.
pub enum FoldBackend {
    Builtin(NussinovModel),
    External(ExternalModel),
}

impl FoldBackend {
    /// Builds the backend, probing external programs up front so a missing
    /// binary fails fast instead of mid-run.
    pub fn from_config(backend: &FitnessBackend) -> Result<Self, HarnessError> {
        match backend {
            FitnessBackend::Builtin => Ok(FoldBackend::Builtin(NussinovModel::default())),
            FitnessBackend::External { command } => {
                let model = ExternalModel::from_command(command).map_err(lift_fitness)?;
                model.probe().map_err(lift_fitness)?;
                Ok(FoldBackend::External(model))
            }
        }
    }

    pub fn model(&self) -> Arc<dyn FitnessModel> {
        match self {
            FoldBackend::Builtin(m) => Arc::new(*m),
            FoldBackend::External(m) => Arc::new(m.clone()),
        }
    }

    pub fn fold(&self, s: &RnaSequence) -> Result<FoldResult, HarnessError> {
        match self {
            FoldBackend::Builtin(m) => Ok(m.fold(s)),
            FoldBackend::External(m) => m.fold(s).map_err(lift_fitness),
        }
    }
}

fn run_single(
    config: &ExperimentConfig,
    model: Arc<dyn FitnessModel>,
    seed: u64,
) -> Result<RunMetrics, HarnessError> {
    match config.algorithm {
        Algorithm::Dqn => run_dqn(&config.dqn, &config.env_config(), model, config.budget, seed)
            .map_err(lift_env),
        Algorithm::Ppo => run_ppo(&config.ppo, &config.env_config(), model, config.budget, seed)
            .map_err(lift_env),
        Algorithm::Greedy => {
            run_greedy(&config.greedy, config.length, model, config.budget, seed)
                .map_err(lift_fitness)
        }
    }
}

/// Directory a given seed's files land in: `out/` for a single-seed run,
/// `out/seed-N/` when several seeds share one invocation.
pub fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    if config.seeds.len() == 1 {
        config.out_dir.clone()
    } else {
        config.out_dir.join(format!("seed-{seed}"))
    }
}

fn write_run_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    backend: &FoldBackend,
    seed: u64,
    metrics: &RunMetrics,
) -> Result<RunSummary, HarnessError> {
    fs::create_dir_all(dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), metrics)?;
    if config.algorithm == Algorithm::Ppo {
        write_scatter_csv(&dir.join("scatter.csv"), metrics)?;
    }
    let best_structure = match &metrics.best_sequence {
        Some(seq) => Some(backend.fold(seq)?.structure.dot_bracket()),
        None => None,
    };
    let summary = RunSummary {
        algorithm: config.algorithm.name().to_string(),
        config: config.to_flat_map(),
        seed,
        final_best_fitness: metrics.best_fitness,
        best_sequence: metrics.best_sequence.as_ref().map(|s| s.to_string()),
        best_structure,
        total_evals: metrics.total_evals,
        wall_time_s: metrics.wall_time_s,
    };
    write_summary_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Runs every configured seed and writes its files. Returns the seeds
/// paired with their metrics, in configuration order.
pub fn run_experiment(
    config: &ExperimentConfig,
) -> Result<Vec<(u64, RunMetrics)>, HarnessError> {
    config.validate()?;
    let backend = FoldBackend::from_config(&config.fitness)?;

    let mut results: Vec<(u64, RunMetrics)> = Vec::with_capacity(config.seeds.len());
    if config.parallel && config.seeds.len() > 1 {
        let outcomes: Vec<Result<RunMetrics, HarnessError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = config
                .seeds
                .iter()
                .map(|&seed| {
                    let model = backend.model();
                    scope.spawn(move || run_single(config, model, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("run thread")).collect()
        });
        for (&seed, outcome) in config.seeds.iter().zip(outcomes) {
            results.push((seed, outcome?));
        }
    } else {
        for &seed in &config.seeds {
            results.push((seed, run_single(config, backend.model(), seed)?));
        }
    }

    for (seed, metrics) in &results {
        write_run_outputs(&seed_dir(config, *seed), config, &backend, *seed, metrics)?;
    }
    Ok(results)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_best: Option<f64>,
    pub total_evals: u64,
    /// best_so_far per epoch, the learning curve plotted in the figures
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub name: String,
    pub loop_policy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    pub runs: Vec<SeedOutcome>,
    pub median_final_best: Option<f64>,
    pub episode_lengths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub kind: String,
    pub arms: Vec<ArmReport>,
}

impl AblationReport {
    pub fn arm(&self, name: &str) -> &ArmReport {
        self.arms.iter().find(|a| a.name == name).expect("arm exists")
    }
}

fn run_arm(
    base: &ExperimentConfig,
    name: &str,
    adjust: impl Fn(&mut ExperimentConfig),
) -> Result<ArmReport, HarnessError> {
    let mut config = base.clone();
    config.out_dir = base.out_dir.join(name);
    adjust(&mut config);
    let results = run_experiment(&config)?;

    let finals: Vec<f64> = results.iter().filter_map(|(_, m)| m.best_fitness).collect();
    Ok(ArmReport {
        name: name.to_string(),
        loop_policy: config.loop_choice.name().to_string(),
        alpha_penalty: match config.loop_choice {
            LoopChoice::RewardPenalty => Some(config.alpha_penalty),
            _ => None,
        },
        max_iter: match config.loop_choice {
            LoopChoice::TryAgain => Some(config.max_iter),
            _ => None,
        },
        runs: results
            .iter()
            .map(|(seed, m)| SeedOutcome {
                seed: *seed,
                final_best: m.best_fitness,
                total_evals: m.total_evals,
                curve: m.rows.iter().map(|r| r.best_so_far).collect(),
            })
            .collect(),
        median_final_best: median(&finals),
        episode_lengths: results
            .iter()
            .flat_map(|(_, m)| m.episode_lengths.iter().copied())
            .collect(),
    })
}

/// Reward-shaping ablation: DQN with the plain reward against the
/// visit-count penalty, paired by seed. Both arms run the revisit-allowing
/// dynamics; the plain arm is the alpha = 0 degenerate case.
pub fn run_ablation_reward(config: &ExperimentConfig) -> Result<AblationReport, HarnessError> {
    if config.algorithm != Algorithm::Dqn {
        return Err(ConfigError::Invalid(
            "ablate-reward requires algo = dqn".into(),
        )
        .into());
    }
    let alpha = config.alpha_penalty;
    let plain = run_arm(config, "plain", |c| {
        c.loop_choice = LoopChoice::RewardPenalty;
        c.alpha_penalty = 0.0;
    })?;
    let penalty = run_arm(config, "penalty", |c| {
        c.loop_choice = LoopChoice::RewardPenalty;
        c.alpha_penalty = alpha;
    })?;
    let report = AblationReport {
        kind: "ablate-reward".to_string(),
        arms: vec![plain, penalty],
    };
    write_report_json(&config.out_dir.join("report.json"), &report)?;
    Ok(report)
}

/// Loop-handling ablation: PPO terminating on revisits against redrawing
/// the action, paired by seed.
pub fn run_ablation_loop(config: &ExperimentConfig) -> Result<AblationReport, HarnessError> {
    if config.algorithm != Algorithm::Ppo {
        return Err(ConfigError::Invalid("ablate-loop requires algo = ppo".into()).into());
    }
    let terminate = run_arm(config, "terminate", |c| {
        c.loop_choice = LoopChoice::Terminate;
    })?;
    let try_again = run_arm(config, "try-again", |c| {
        c.loop_choice = LoopChoice::TryAgain;
    })?;
    let report = AblationReport {
        kind: "ablate-loop".to_string(),
        arms: vec![terminate, try_again],
    };
    write_report_json(&config.out_dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSearchStats {
    pub median: f64,
    pub best: f64,
    pub evals: u64,
}

/// Uniform random search: the no-learning baseline every optimizer should
/// beat. Returns the median and maximum fitness over `draws` sequences.
pub fn random_search(
    length: usize,
    model: &dyn FitnessModel,
    draws: u64,
    seed: u64,
) -> Result<RandomSearchStats, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fits = Vec::with_capacity(draws as usize);
    for _ in 0..draws {
        let s = RnaSequence::random(&mut rng, length)
            .map_err(|e| HarnessError::Run(e.to_string()))?;
        fits.push(model.fitness(&s).map_err(lift_fitness)?);
    }
    let best = fits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RandomSearchStats {
        median: median(&fits).expect("draws > 0"),
        best,
        evals: draws,
    })
}

/// One formatted line per sequence: sequence, dot-bracket, energy,
/// fitness.
pub fn fold_lines(
    backend: &FoldBackend,
    sequences: &[String],
) -> Result<Vec<String>, HarnessError> {
    let mut lines = Vec::with_capacity(sequences.len());
    for text in sequences {
        let seq = RnaSequence::parse(text)
            .map_err(|e| HarnessError::Config(ConfigError::Invalid(e.to_string())))?;
        let fold = backend.fold(&seq)?;
        lines.push(format!(
            "{seq} {} {:?} {:?}",
            fold.structure.dot_bracket(),
            fold.energy,
            0.0 - fold.energy
        ));
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rnaopt_core::fitness::ClosureModel;
    use rnaopt_core::seq::Base;

    fn greedy_config(out: &Path) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.set("algo", "greedy").unwrap();
        config.set("len", "8").unwrap();
        config.set("budget", "500").unwrap();
        config.out_dir = out.to_path_buf();
        config.seeds = vec![5];
        config
    }

    #[test]
    fn single_seed_writes_into_out_root() {
        let dir = tempfile::tempdir().unwrap();
        let config = greedy_config(dir.path());
        let results = run_experiment(&config).unwrap();
        assert_eq!(results.len(), 1);
        let metrics_text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let rows = metrics_text.lines().count() - 1;
        assert_eq!(rows, results[0].1.rows.len());
        assert!(dir.path().join("summary.json").exists());
        assert!(!dir.path().join("scatter.csv").exists(), "scatter is for ppo runs");

        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["algorithm"], "greedy");
        assert_eq!(summary["seed"], 5);
        assert!(summary["total_evals"].as_u64().unwrap() <= 500);
        let best_seq = summary["best_sequence"].as_str().unwrap();
        let best_fit = summary["final_best_fitness"].as_f64().unwrap();
        let model = NussinovModel::default();
        let refit = model
            .fitness(&RnaSequence::parse(best_seq).unwrap())
            .unwrap();
        assert_eq!(refit, best_fit);
        assert_eq!(
            summary["best_structure"].as_str().unwrap().len(),
            best_seq.len()
        );
    }

    #[test]
    fn multi_seed_writes_per_seed_directories() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.seeds = vec![1, 2];
        run_experiment(&config).unwrap();
        assert!(dir.path().join("seed-1/metrics.csv").exists());
        assert!(dir.path().join("seed-2/summary.json").exists());
    }

    #[test]
    fn parallel_seeds_match_sequential_results() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut sequential = greedy_config(dir1.path());
        sequential.seeds = vec![1, 2, 3];
        let mut parallel = sequential.clone();
        parallel.out_dir = dir2.path().to_path_buf();
        parallel.parallel = true;
        let a = run_experiment(&sequential).unwrap();
        let b = run_experiment(&parallel).unwrap();
        for ((sa, ma), (sb, mb)) in a.iter().zip(&b) {
            assert_eq!(sa, sb);
            assert!(ma.same_results(mb));
        }
        assert_eq!(
            fs::read_to_string(dir1.path().join("seed-2/metrics.csv")).unwrap(),
            fs::read_to_string(dir2.path().join("seed-2/metrics.csv")).unwrap()
        );
    }

    #[test]
    fn ppo_runs_emit_scatter() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.set("algo", "ppo").unwrap();
        config.set("budget", "300").unwrap();
        config.set("ppo-epochs", "3").unwrap();
        config.set("ppo-steps-per-batch", "40").unwrap();
        run_experiment(&config).unwrap();
        let scatter = fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
        assert!(scatter.starts_with("episode,best_fitness\n"));
        assert!(scatter.lines().count() > 1);
    }

    #[test]
    fn budget_one_reports_the_single_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.set("budget", "1").unwrap();
        let results = run_experiment(&config).unwrap();
        assert_eq!(results[0].1.total_evals, 1);
        assert!(results[0].1.best_fitness.is_some());
    }

    #[test]
    fn missing_external_backend_exits_three() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.set("external-cmd", "/nonexistent/fold-prog").unwrap();
        let err = run_experiment(&config).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn invalid_budget_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.budget = 0;
        let err = run_experiment(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn reward_ablation_with_zero_alpha_degenerates_to_identical_arms() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.set("algo", "dqn").unwrap();
        config.set("len", "4").unwrap();
        config.set("budget", "200").unwrap();
        config.set("dqn-epochs", "2").unwrap();
        config.set("dqn-collect-steps", "30").unwrap();
        config.set("dqn-train-iters", "4").unwrap();
        config.set("alpha-penalty", "0").unwrap();
        config.seeds = vec![1, 2];
        let report = run_ablation_reward(&config).unwrap();
        assert_eq!(report.kind, "ablate-reward");
        assert_eq!(report.arms.len(), 2);
        assert_eq!(report.arm("plain").runs.len(), 2);
        assert_eq!(
            report.arm("plain").median_final_best,
            report.arm("penalty").median_final_best
        );
        for seed in [1, 2] {
            let a = fs::read_to_string(
                dir.path().join(format!("plain/seed-{seed}/metrics.csv")),
            )
            .unwrap();
            let b = fs::read_to_string(
                dir.path().join(format!("penalty/seed-{seed}/metrics.csv")),
            )
            .unwrap();
            assert_eq!(a, b, "alpha 0 must make the arms identical");
        }
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn reward_ablation_rejects_non_dqn() {
        let dir = tempfile::tempdir().unwrap();
        let config = greedy_config(dir.path());
        let err = run_ablation_reward(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn loop_ablation_pairs_and_reports_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.set("algo", "ppo").unwrap();
        config.set("len", "4").unwrap();
        config.set("budget", "250").unwrap();
        config.set("ppo-epochs", "2").unwrap();
        config.set("ppo-steps-per-batch", "40").unwrap();
        config.seeds = vec![1, 2];
        let report = run_ablation_loop(&config).unwrap();
        assert_eq!(report.kind, "ablate-loop");
        assert_eq!(report.arm("terminate").loop_policy, "terminate");
        assert_eq!(report.arm("try-again").max_iter, Some(8));
        assert!(!report.arm("terminate").episode_lengths.is_empty());
        assert!(!report.arm("try-again").episode_lengths.is_empty());
        // terminating on revisit shortens episodes
        let avg = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
        assert!(
            avg(&report.arm("terminate").episode_lengths)
                <= avg(&report.arm("try-again").episode_lengths)
        );
        assert!(dir.path().join("try-again/seed-1/metrics.csv").exists());
    }

    #[test]
    fn loop_ablation_rejects_non_ppo() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = greedy_config(dir.path());
        config.set("algo", "dqn").unwrap();
        let err = run_ablation_loop(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn random_search_matches_direct_computation() {
        let model = ClosureModel(|s: &RnaSequence| {
            s.bases().iter().filter(|&&b| b == Base::G).count() as f64
        });
        let stats = random_search(6, &model, 200, 9).unwrap();
        assert_eq!(stats.evals, 200);
        assert!(stats.best <= 6.0 && stats.best >= stats.median);
        let again = random_search(6, &model, 200, 9).unwrap();
        assert_eq!(stats, again);
    }

    #[test]
    fn fold_lines_format() {
        let backend = FoldBackend::Builtin(NussinovModel::default());
        let lines = fold_lines(
            &backend,
            &["GGGAAACCC".to_string(), "AAAA".to_string()],
        )
        .unwrap();
        assert_eq!(lines[0], "GGGAAACCC (((...))) -9.0 9.0");
        assert_eq!(lines[1], "AAAA .... 0.0 0.0");
    }

    #[test]
    fn fold_lines_reject_invalid_bases() {
        let backend = FoldBackend::Builtin(NussinovModel::default());
        let err = fold_lines(&backend, &["ACGT".to_string()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
