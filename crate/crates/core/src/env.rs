//! The flip environment: state = current sequence, action = one flip,
//! reward = fitness of the successor.
//!
//! A per-episode seen set detects revisits. What happens on a revisit is
//! the [`LoopPolicy`]:
//!
//! - `Terminate` ends the episode with reward 0,
//! - `TryAgain` redraws the action up to `max_iter` times (see
//!   [`Env::try_step`]), ending the episode only when every draw lands on
//!   a seen state,
//! - `RewardPenalty` always transitions but subtracts `alpha * visits`
//!   from the reward.
//!
//! Fitness is only evaluated for accepted transitions, so rejected or
//! loop-terminating steps cost nothing against an evaluation budget.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::{FitnessError, FitnessModel};
use crate::seq::{FlipAction, RnaSequence, SeqError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("environment was not reset")]
    NotReset,
    #[error(transparent)]
    InvalidAction(#[from] SeqError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

/// How the environment handles a step into an already-seen sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LoopPolicy {
    /// End the episode immediately with reward 0.
    Terminate,
    /// Redraw the action, up to `max_iter` attempts per step.
    TryAgain { max_iter: usize },
    /// Transition anyway; reward = fitness - alpha * prior visit count.
    RewardPenalty { alpha: f64 },
}

impl LoopPolicy {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_MAX_ITER: usize = 8;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Sequence length, fixed for every episode.
    pub length: usize,
    /// Hard episode horizon.
    pub max_steps: usize,
    pub loop_policy: LoopPolicy,
}

impl EnvConfig {
    /// Default horizon is 2L; the episode needs some bound under the
    /// non-terminating policies.
    pub fn new(length: usize, loop_policy: LoopPolicy) -> Self {
        EnvConfig { length, max_steps: 2 * length, loop_policy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoneReason {
    LoopDetected,
    BudgetExhausted,
    MaxSteps,
    None,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// The flip that produced this outcome; `None` only for retry-budget
    /// exhaustion, where no proposal was accepted.
    pub action: Option<FlipAction>,
    pub next: RnaSequence,
    pub reward: f64,
    pub done: bool,
    pub done_reason: DoneReason,
    /// Fitness of `next`; `None` when the step did not evaluate it (loop
    /// termination, retry-budget exhaustion).
    pub fitness: Option<f64>,
    /// Visit count of `next` after this step.
    pub seen_count: u32,
}

/// Result of [`Env::step`]: under `TryAgain` a proposal into a seen state
/// is rejected without touching the episode, every other policy always
/// produces an outcome.
#[derive(Debug, Clone)]
pub enum StepResult {
    Outcome(StepOutcome),
    RejectedSeen,
}

impl StepResult {
    /// Unwraps the outcome; panics on a rejection, which only `TryAgain`
    /// can produce.
    pub fn into_outcome(self) -> StepOutcome {
        match self {
            StepResult::Outcome(o) => o,
            StepResult::RejectedSeen => panic!("step was rejected by the try-again policy"),
        }
    }
}

/// Mutable episode state: the current sequence, visit counts, and the
/// running per-episode best fitness.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub current: RnaSequence,
    seen: HashMap<RnaSequence, u32>,
    pub steps_taken: usize,
    pub episode_best: f64,
    done: Option<DoneReason>,
}

impl EnvState {
    pub fn seen_len(&self) -> usize {
        self.seen.len()
    }

    pub fn seen_count(&self, s: &RnaSequence) -> u32 {
        self.seen.get(s).copied().unwrap_or(0)
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    pub fn done_reason(&self) -> DoneReason {
        self.done.unwrap_or(DoneReason::None)
    }
}

pub struct Env {
    config: EnvConfig,
    model: Arc<dyn FitnessModel>,
    state: Option<EnvState>,
}

impl Env {
    pub fn new(config: EnvConfig, model: Arc<dyn FitnessModel>) -> Self {
        Env { config, model, state: None }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn current(&self) -> Option<&RnaSequence> {
        self.state.as_ref().map(|st| &st.current)
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().map(|st| st.is_done()).unwrap_or(true)
    }

    /// Starts a fresh episode from a uniformly random sequence. Costs one
    /// fitness evaluation (the initial state's).
    pub fn reset<R: Rng>(&mut self, rng: &mut R) -> Result<&EnvState, EnvError> {
        let current = RnaSequence::random(rng, self.config.length)?;
        let fitness = self.model.fitness(&current)?;
        let mut seen = HashMap::new();
        seen.insert(current.clone(), 1);
        self.state = Some(EnvState {
            current,
            seen,
            steps_taken: 0,
            episode_best: fitness,
            done: None,
        });
        Ok(self.state.as_ref().unwrap())
    }

    fn state_mut(&mut self) -> Result<&mut EnvState, EnvError> {
        let st = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if st.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        Ok(st)
    }

    /// Takes one flip under the configured loop policy.
    pub fn step(&mut self, action: FlipAction) -> Result<StepResult, EnvError> {
        let policy = self.config.loop_policy;
        let max_steps = self.config.max_steps;
        let model = Arc::clone(&self.model);
        let st = self.state_mut()?;
        let next = st.current.apply(action)?;
        let prior_visits = st.seen_count(&next);

        match policy {
            LoopPolicy::Terminate => {
                if prior_visits > 0 {
                    st.done = Some(DoneReason::LoopDetected);
                    return Ok(StepResult::Outcome(StepOutcome {
                        action: Some(action),
                        next,
                        reward: 0.0,
                        done: true,
                        done_reason: DoneReason::LoopDetected,
                        fitness: None,
                        seen_count: prior_visits,
                    }));
                }
                let fitness = model.fitness(&next)?;
                Ok(StepResult::Outcome(Self::accept(
                    st, action, next, fitness, fitness, 1, max_steps,
                )))
            }
            LoopPolicy::TryAgain { .. } => {
                if prior_visits > 0 {
                    return Ok(StepResult::RejectedSeen);
                }
                let fitness = model.fitness(&next)?;
                Ok(StepResult::Outcome(Self::accept(
                    st, action, next, fitness, fitness, 1, max_steps,
                )))
            }
            LoopPolicy::RewardPenalty { alpha } => {
                let fitness = model.fitness(&next)?;
                let reward = fitness - alpha * prior_visits as f64;
                Ok(StepResult::Outcome(Self::accept(
                    st,
                    action,
                    next,
                    fitness,
                    reward,
                    prior_visits + 1,
                    max_steps,
                )))
            }
        }
    }

    /// Commits a transition: updates the seen count, step counter, episode
    /// best, and the horizon check.
    fn accept(
        st: &mut EnvState,
        action: FlipAction,
        next: RnaSequence,
        fitness: f64,
        reward: f64,
        new_count: u32,
        max_steps: usize,
    ) -> StepOutcome {
        st.seen.insert(next.clone(), new_count);
        st.current = next.clone();
        st.steps_taken += 1;
        if fitness > st.episode_best {
            st.episode_best = fitness;
        }
        let done = st.steps_taken >= max_steps;
        let done_reason = if done { DoneReason::MaxSteps } else { DoneReason::None };
        if done {
            st.done = Some(DoneReason::MaxSteps);
        }
        StepOutcome {
            action: Some(action),
            next,
            reward,
            done,
            done_reason,
            fitness: Some(fitness),
            seen_count: new_count,
        }
    }

    /// Try-again step: draws actions from `sampler` until one leads to an
    /// unseen state, up to `max_iter` draws. When every draw lands on a
    /// seen state the episode ends with `BudgetExhausted` and the seen set
    /// is cleared.
    pub fn try_step<R, F>(
        &mut self,
        rng: &mut R,
        max_iter: usize,
        mut sampler: F,
    ) -> Result<StepOutcome, EnvError>
    where
        R: Rng,
        F: FnMut(&RnaSequence, &mut R) -> FlipAction,
    {
        self.state_mut()?; // surface NotReset / EpisodeFinished up front
        for _ in 0..max_iter {
            let action = {
                let st = self.state.as_ref().unwrap();
                sampler(&st.current, rng)
            };
            match self.step(action)? {
                StepResult::Outcome(outcome) => return Ok(outcome),
                StepResult::RejectedSeen => continue,
            }
        }
        let st = self.state.as_mut().unwrap();
        st.seen.clear();
        st.done = Some(DoneReason::BudgetExhausted);
        Ok(StepOutcome {
            action: None,
            next: st.current.clone(),
            reward: 0.0,
            done: true,
            done_reason: DoneReason::BudgetExhausted,
            fitness: None,
            seen_count: 0,
        })
    }
}
