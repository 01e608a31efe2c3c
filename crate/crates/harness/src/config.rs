//! Experiment configuration: a flat `key = value` file format plus CLI
//! overrides. Precedence is defaults < config file < flags. Key names
//! match the CLI flag names; algorithm hyperparameters use prefixed keys
//! (`dqn-lr`, `ppo-clip-ratio`, `greedy-patience`, ...).

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rnaopt_core::dqn::DqnConfig;
use rnaopt_core::env::{EnvConfig, LoopPolicy};
use rnaopt_core::greedy::GreedyConfig;
use rnaopt_core::ppo::PpoConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{key}: {message}")]
    BadValue { key: String, message: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dqn,
    Ppo,
    Greedy,
}

impl Algorithm {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        match text {
            "dqn" => Ok(Algorithm::Dqn),
            "ppo" => Ok(Algorithm::Ppo),
            "greedy" => Ok(Algorithm::Greedy),
            other => Err(ConfigError::BadValue {
                key: "algo".into(),
                message: format!("expected dqn, ppo, or greedy, got {other:?}"),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Ppo => "ppo",
            Algorithm::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitnessBackend {
    Builtin,
    External { command: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopChoice {
    Terminate,
    TryAgain,
    RewardPenalty,
}

impl LoopChoice {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        match text {
            "terminate" => Ok(LoopChoice::Terminate),
            "try-again" => Ok(LoopChoice::TryAgain),
            "reward-penalty" => Ok(LoopChoice::RewardPenalty),
            other => Err(ConfigError::BadValue {
                key: "loop-policy".into(),
                message: format!(
                    "expected terminate, try-again, or reward-penalty, got {other:?}"
                ),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LoopChoice::Terminate => "terminate",
            LoopChoice::TryAgain => "try-again",
            LoopChoice::RewardPenalty => "reward-penalty",
        }
    }
}

/// Fully resolved experiment settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub length: usize,
    pub seeds: Vec<u64>,
    pub budget: u64,
    pub fitness: FitnessBackend,
    pub loop_choice: LoopChoice,
    pub max_iter: usize,
    pub alpha_penalty: f64,
    /// Episode horizon; `None` means the environment default of 2L.
    pub max_steps: Option<usize>,
    pub out_dir: PathBuf,
    pub parallel: bool,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub greedy: GreedyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Greedy,
            length: 20,
            seeds: vec![0],
            budget: 10_000,
            fitness: FitnessBackend::Builtin,
            loop_choice: LoopChoice::TryAgain,
            max_iter: LoopPolicy::DEFAULT_MAX_ITER,
            alpha_penalty: LoopPolicy::DEFAULT_ALPHA,
            max_steps: None,
            out_dir: PathBuf::from("results"),
            parallel: false,
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
            greedy: GreedyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn loop_policy(&self) -> LoopPolicy {
        match self.loop_choice {
            LoopChoice::Terminate => LoopPolicy::Terminate,
            LoopChoice::TryAgain => LoopPolicy::TryAgain { max_iter: self.max_iter },
            LoopChoice::RewardPenalty => {
                LoopPolicy::RewardPenalty { alpha: self.alpha_penalty }
            }
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        let mut env = EnvConfig::new(self.length, self.loop_policy());
        if let Some(steps) = self.max_steps {
            env.max_steps = steps;
        }
        env
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError::Invalid("budget must be positive".into()));
        }
        if self.length == 0 {
            return Err(ConfigError::Invalid("len must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        if let FitnessBackend::External { command } = &self.fitness {
            if command.trim().is_empty() {
                return Err(ConfigError::Invalid(
                    "external fitness requires external-cmd".into(),
                ));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` assignment from a file or flag.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue { key: key.to_string(), message };
        match key {
            "algo" => self.algorithm = Algorithm::parse(value)?,
            "len" => self.length = parse_num(key, value)?,
            "seed" => self.seeds.push(parse_num(key, value)?),
            "budget" => self.budget = parse_num(key, value)?,
            "loop-policy" => self.loop_choice = LoopChoice::parse(value)?,
            "max-iter" => self.max_iter = parse_num(key, value)?,
            "alpha-penalty" => self.alpha_penalty = parse_num(key, value)?,
            "max-steps" => self.max_steps = Some(parse_num(key, value)?),
            "fitness" => match value {
                "builtin" => self.fitness = FitnessBackend::Builtin,
                "external" => {
                    let command = match &self.fitness {
                        FitnessBackend::External { command } => command.clone(),
                        FitnessBackend::Builtin => String::new(),
                    };
                    self.fitness = FitnessBackend::External { command };
                }
                other => {
                    return Err(bad(format!("expected builtin or external, got {other:?}")))
                }
            },
            "external-cmd" => {
                self.fitness = FitnessBackend::External { command: value.to_string() }
            }
            "out" => self.out_dir = PathBuf::from(value),
            "parallel" => {
                self.parallel = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(bad(format!("expected true or false, got {other:?}")))
                    }
                }
            }

            "dqn-gamma" => self.dqn.gamma = parse_num(key, value)?,
            "dqn-lr" => self.dqn.lr = parse_num(key, value)?,
            "dqn-hidden" => self.dqn.hidden = parse_num(key, value)?,
            "dqn-eps-start" => self.dqn.eps_start = parse_num(key, value)?,
            "dqn-eps-end" => self.dqn.eps_end = parse_num(key, value)?,
            "dqn-epochs" => self.dqn.epochs = parse_num(key, value)?,
            "dqn-collect-steps" => self.dqn.collect_steps = parse_num(key, value)?,
            "dqn-train-iters" => self.dqn.train_iters = parse_num(key, value)?,
            "dqn-batch-size" => self.dqn.batch_size = parse_num(key, value)?,
            "dqn-target-sync" => self.dqn.target_sync_interval = parse_num(key, value)?,
            "dqn-buffer-capacity" => self.dqn.buffer_capacity = parse_num(key, value)?,
            "dqn-alpha-per" => self.dqn.alpha_per = parse_num(key, value)?,
            "dqn-epsilon-per" => self.dqn.epsilon_per = parse_num(key, value)?,
            "dqn-beta-start" => self.dqn.beta_start = parse_num(key, value)?,
            "dqn-beta-end" => self.dqn.beta_end = parse_num(key, value)?,

            "ppo-gamma" => self.ppo.gamma = parse_num(key, value)?,
            "ppo-clip-ratio" => self.ppo.clip_ratio = parse_num(key, value)?,
            "ppo-kl-bound" => self.ppo.kl_bound = parse_num(key, value)?,
            "ppo-actor-lr" => self.ppo.actor_lr = parse_num(key, value)?,
            "ppo-critic-lr" => self.ppo.critic_lr = parse_num(key, value)?,
            "ppo-hidden" => self.ppo.hidden = parse_num(key, value)?,
            "ppo-epochs" => self.ppo.epochs = parse_num(key, value)?,
            "ppo-steps-per-batch" => self.ppo.steps_per_batch = parse_num(key, value)?,
            "ppo-update-epochs" => self.ppo.update_epochs = parse_num(key, value)?,
            "ppo-minibatch" => self.ppo.minibatch_size = parse_num(key, value)?,
            "ppo-max-iter" => self.ppo.max_iter = parse_num(key, value)?,
            "ppo-entropy-coef" => self.ppo.entropy_coef = parse_num(key, value)?,

            "greedy-buffer-size" => self.greedy.buffer_size = parse_num(key, value)?,
            "greedy-sample-size" => self.greedy.sample_size = parse_num(key, value)?,
            "greedy-max-iterations" => self.greedy.max_iterations = parse_num(key, value)?,
            "greedy-mutations" => self.greedy.mutations = parse_num(key, value)?,
            "greedy-patience" => self.greedy.patience = parse_num(key, value)?,

            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Merges a config file body. A `seed` key in the file replaces the
    /// default seed list rather than appending to it.
    pub fn apply_file(&mut self, body: &str) -> Result<(), ConfigError> {
        let mut saw_seed = false;
        for (idx, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: idx + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "seed" && !saw_seed {
                self.seeds.clear();
                saw_seed = true;
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// The resolved settings as flat key/value text, echoing the file
    /// format. Only keys relevant to the chosen algorithm are included.
    pub fn to_flat_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("algo", self.algorithm.name().to_string());
        put("len", self.length.to_string());
        put(
            "seed",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        put("budget", self.budget.to_string());
        put("fitness", match &self.fitness {
            FitnessBackend::Builtin => "builtin".to_string(),
            FitnessBackend::External { .. } => "external".to_string(),
        });
        if let FitnessBackend::External { command } = &self.fitness {
            put("external-cmd", command.clone());
        }
        put("out", self.out_dir.display().to_string());
        put("parallel", self.parallel.to_string());
        if self.algorithm != Algorithm::Greedy {
            put("loop-policy", self.loop_choice.name().to_string());
            match self.loop_choice {
                LoopChoice::TryAgain => put("max-iter", self.max_iter.to_string()),
                LoopChoice::RewardPenalty => {
                    put("alpha-penalty", format!("{:?}", self.alpha_penalty))
                }
                LoopChoice::Terminate => {}
            }
            put("max-steps", self.env_config().max_steps.to_string());
        }
        match self.algorithm {
            Algorithm::Dqn => {
                put("dqn-gamma", format!("{:?}", self.dqn.gamma));
                put("dqn-lr", format!("{:?}", self.dqn.lr));
                put("dqn-hidden", self.dqn.hidden.to_string());
                put("dqn-eps-start", format!("{:?}", self.dqn.eps_start));
                put("dqn-eps-end", format!("{:?}", self.dqn.eps_end));
                put("dqn-epochs", self.dqn.epochs.to_string());
                put("dqn-collect-steps", self.dqn.collect_steps.to_string());
                put("dqn-train-iters", self.dqn.train_iters.to_string());
                put("dqn-batch-size", self.dqn.batch_size.to_string());
                put("dqn-target-sync", self.dqn.target_sync_interval.to_string());
                put("dqn-buffer-capacity", self.dqn.buffer_capacity.to_string());
                put("dqn-alpha-per", format!("{:?}", self.dqn.alpha_per));
                put("dqn-epsilon-per", format!("{:?}", self.dqn.epsilon_per));
                put("dqn-beta-start", format!("{:?}", self.dqn.beta_start));
                put("dqn-beta-end", format!("{:?}", self.dqn.beta_end));
            }
            Algorithm::Ppo => {
                put("ppo-gamma", format!("{:?}", self.ppo.gamma));
                put("ppo-clip-ratio", format!("{:?}", self.ppo.clip_ratio));
                put("ppo-kl-bound", format!("{:?}", self.ppo.kl_bound));
                put("ppo-actor-lr", format!("{:?}", self.ppo.actor_lr));
                put("ppo-critic-lr", format!("{:?}", self.ppo.critic_lr));
                put("ppo-hidden", self.ppo.hidden.to_string());
                put("ppo-epochs", self.ppo.epochs.to_string());
                put("ppo-steps-per-batch", self.ppo.steps_per_batch.to_string());
                put("ppo-update-epochs", self.ppo.update_epochs.to_string());
                put("ppo-minibatch", self.ppo.minibatch_size.to_string());
                put("ppo-entropy-coef", format!("{:?}", self.ppo.entropy_coef));
            }
            Algorithm::Greedy => {
                put("greedy-buffer-size", self.greedy.buffer_size.to_string());
                put("greedy-sample-size", self.greedy.sample_size.to_string());
                put("greedy-max-iterations", self.greedy.max_iterations.to_string());
                put("greedy-mutations", self.greedy.mutations.to_string());
                put("greedy-patience", self.greedy.patience.to_string());
            }
        }
        map
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        message: format!("could not parse {value:?}"),
    })
}
