//! Actor-critic PPO with a clipped surrogate objective and a KL early
//! stop, collecting data through the try-again loop: proposals into
//! already-seen states are redrawn (up to `max_iter` per step) and never
//! enter the training batch.
//!
//! The actor maps a one-hot sequence to logits over the 4L action slots;
//! self-flip slots get probability exactly zero through the masked
//! softmax. Advantages are discounted episode returns minus the critic
//! baseline, normalized per batch.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{Env, EnvConfig, EnvError, LoopPolicy, StepResult};
use crate::fitness::{EvalTracker, FitnessModel};
use crate::metrics::{EpisodeSummary, EpochRow, RunMetrics};
use crate::neural::Mlp;
use crate::seq::{FlipAction, RnaSequence};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PpoError {
    #[error("cannot update from an empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_ratio: f64,
    /// Early-stop threshold on the mean KL between the behavior policy and
    /// the updated policy.
    pub kl_bound: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    pub epochs: usize,
    /// Accepted environment steps per collection phase.
    pub steps_per_batch: usize,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    /// Redraw attempts per step under the try-again policy.
    pub max_iter: usize,
    pub entropy_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.9,
            clip_ratio: 0.2,
            kl_bound: 0.02,
            actor_lr: 0.01,
            critic_lr: 0.01,
            hidden: 64,
            epochs: 200,
            steps_per_batch: 256,
            update_epochs: 4,
            minibatch_size: 64,
            max_iter: 8,
            entropy_coef: 0.01,
        }
    }
}

pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl ActorCritic {
    pub fn new<R: Rng>(config: &PpoConfig, length: usize, rng: &mut R) -> Self {
        let actor = Mlp::init(rng, &[4 * length, config.hidden, 4 * length]);
        let critic = Mlp::init(rng, &[4 * length, config.hidden, 1]);
        ActorCritic { actor, critic }
    }

    pub fn value(&self, s: &RnaSequence) -> f64 {
        self.critic.forward_one(s.one_hot().values()).expect("critic sized for this length")[0]
    }

    pub fn policy(&self, s: &RnaSequence) -> Vec<f64> {
        let logits = self.actor.forward_one(s.one_hot().values()).expect("actor sized");
        masked_softmax(&logits, &s.slot_mask())
    }
}

/// Softmax restricted to `mask`; masked entries come out exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    debug_assert_eq!(logits.len(), mask.len());
    let mut max = f64::NEG_INFINITY;
    for (j, &ok) in mask.iter().enumerate() {
        if ok && logits[j] > max {
            max = logits[j];
        }
    }
    let mut probs = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (j, &ok) in mask.iter().enumerate() {
        if ok {
            let e = (logits[j] - max).exp();
            probs[j] = e;
            sum += e;
        }
    }
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Entropy over the nonzero entries; the p log p limit at zero is zero.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// `KL(p || q)` over the support of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            kl += pi * (pi.ln() - qi.ln());
        }
    }
    kl.max(0.0)
}

/// Draws an action from the masked policy; returns it with its
/// log-probability under the current actor.
pub fn sample_action<R: Rng>(
    ac: &ActorCritic,
    s: &RnaSequence,
    rng: &mut R,
) -> (FlipAction, f64) {
    let probs = ac.policy(s);
    let u = rng.gen::<f64>();
    let mut cum = 0.0;
    let mut slot = None;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            slot = Some(j);
            if u < cum {
                break;
            }
        }
    }
    let slot = slot.expect("at least one valid action");
    (FlipAction::from_slot(slot), probs[slot].ln())
}

/// One stored on-policy step.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub state: RnaSequence,
    pub action: FlipAction,
    pub log_prob: f64,
    /// Behavior-policy distribution at sampling time, kept for exact KL.
    pub old_probs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    /// Marks the last stored step of its episode; returns never bootstrap
    /// past it.
    pub episode_end: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryBatch {
    pub steps: Vec<TrajectoryStep>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub episodes: Vec<EpisodeSummary>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Gathers `steps_per_batch` accepted steps (or stops at the evaluation
/// budget). Under try-again, rejected proposals burn retries without
/// entering the batch; retry exhaustion ends the episode storing nothing.
/// Under terminate, the loop-ending step is stored with reward 0.
pub fn collect_trajectories<R: Rng>(
    env: &mut Env,
    ac: &ActorCritic,
    config: &PpoConfig,
    tracker: &EvalTracker,
    budget: u64,
    rng: &mut R,
) -> Result<TrajectoryBatch, EnvError> {
    let mut batch = TrajectoryBatch::default();
    let mut accepted = 0usize;
    while accepted < config.steps_per_batch && tracker.count() < budget {
        env.reset(rng)?;
        let mut length = 0usize;
        let episode_start = batch.steps.len();
        loop {
            if accepted >= config.steps_per_batch || tracker.count() >= budget {
                break;
            }
            let state = env.current().expect("episode active").clone();
            let value = ac.value(&state);
            let mut sampled = None;
            let outcome = match env.config().loop_policy {
                LoopPolicy::TryAgain { max_iter } => {
                    let cap = if max_iter == 0 { config.max_iter } else { max_iter };
                    env.try_step(rng, cap, |s, r| {
                        let (a, lp) = sample_action(ac, s, r);
                        sampled = Some((lp, ac.policy(s)));
                        a
                    })?
                }
                _ => {
                    let (action, lp) = sample_action(ac, &state, rng);
                    sampled = Some((lp, ac.policy(&state)));
                    match env.step(action)? {
                        StepResult::Outcome(o) => o,
                        StepResult::RejectedSeen => unreachable!("only try-again rejects"),
                    }
                }
            };
            if let Some(action) = outcome.action {
                let (log_prob, old_probs) = sampled.expect("action implies a sample");
                if outcome.fitness.is_some() {
                    accepted += 1;
                    length += 1;
                }
                batch.steps.push(TrajectoryStep {
                    state,
                    action,
                    log_prob,
                    old_probs,
                    reward: outcome.reward,
                    value,
                    episode_end: false,
                });
            }
            if outcome.done {
                break;
            }
        }
        if batch.steps.len() > episode_start {
            batch.steps.last_mut().unwrap().episode_end = true;
        }
        let st = env.state().expect("episode ran");
        batch.episodes.push(EpisodeSummary { best: st.episode_best, length });
    }
    if let Some(last) = batch.steps.last_mut() {
        last.episode_end = true;
    }
    Ok(batch)
}

/// Discounted returns per episode segment (no bootstrap across ends),
/// advantages `G - V` normalized to zero mean and unit variance.
pub fn compute_advantages(batch: &mut TrajectoryBatch, gamma: f64) {
    let n = batch.steps.len();
    batch.returns = vec![0.0; n];
    let mut g = 0.0;
    for i in (0..n).rev() {
        if batch.steps[i].episode_end {
            g = 0.0;
        }
        g = batch.steps[i].reward + gamma * g;
        batch.returns[i] = g;
    }
    batch.advantages = batch
        .returns
        .iter()
        .zip(&batch.steps)
        .map(|(g, s)| g - s.value)
        .collect();
    if n > 1 {
        let mean = batch.advantages.iter().sum::<f64>() / n as f64;
        let var =
            batch.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        for a in &mut batch.advantages {
            *a = (*a - mean) / std;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoUpdateSummary {
    /// Mean KL at the last measured update epoch.
    pub mean_kl: f64,
    /// Fraction of samples whose surrogate was clipped in the final epoch.
    pub clip_fraction: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub epochs_run: usize,
}

/// Clipped-surrogate update with entropy bonus and per-epoch KL early
/// stop (stop-after semantics: the overshooting epoch's update stands).
pub fn ppo_update<R: Rng>(
    ac: &mut ActorCritic,
    batch: &TrajectoryBatch,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoUpdateSummary, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let n = batch.len();
    let mut summary = PpoUpdateSummary {
        mean_kl: 0.0,
        clip_fraction: 0.0,
        actor_loss: 0.0,
        critic_loss: 0.0,
        epochs_run: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.update_epochs {
        order.shuffle(rng);
        let mut clipped = 0usize;
        let mut actor_loss_sum = 0.0;
        let mut critic_loss_sum = 0.0;
        for chunk in order.chunks(config.minibatch_size.max(1)) {
            let m = chunk.len();
            let inputs: Vec<Vec<f64>> =
                chunk.iter().map(|&i| batch.steps[i].state.one_hot().into_values()).collect();

            let (logits, actor_trace) = ac.actor.forward(&inputs).expect("actor batch");
            let (values, critic_trace) = ac.critic.forward(&inputs).expect("critic batch");

            let mut actor_grad = vec![vec![0.0; logits[0].len()]; m];
            let mut critic_grad = vec![vec![0.0; 1]; m];
            for (row, &i) in chunk.iter().enumerate() {
                let step = &batch.steps[i];
                let mask = step.state.slot_mask();
                let probs = masked_softmax(&logits[row], &mask);
                let a = step.action.slot();
                let logp_new = probs[a].ln();
                let ratio = (logp_new - step.log_prob).exp();
                let adv = batch.advantages[i];

                let lo = 1.0 - config.clip_ratio;
                let hi = 1.0 + config.clip_ratio;
                let surrogate = (ratio * adv).min(ratio.clamp(lo, hi) * adv);
                let clip_active = (adv > 0.0 && ratio > hi) || (adv < 0.0 && ratio < lo);
                if clip_active {
                    clipped += 1;
                }
                let h = entropy(&probs);
                actor_loss_sum += -surrogate - config.entropy_coef * h;

                // d(-surrogate)/dlogit_j = -(adv * ratio / m) (1{j=a} - p_j)
                // when unclipped; the entropy bonus contributes
                // (coef / m) p_j (ln p_j + H) everywhere valid.
                for (j, &ok) in mask.iter().enumerate() {
                    if !ok {
                        continue;
                    }
                    let p = probs[j];
                    let mut g = 0.0;
                    if !clip_active {
                        let indicator = if j == a { 1.0 } else { 0.0 };
                        g -= adv * ratio * (indicator - p) / m as f64;
                    }
                    if p > 0.0 {
                        g += config.entropy_coef * p * (p.ln() + h) / m as f64;
                    }
                    actor_grad[row][j] = g;
                }

                let verr = values[row][0] - batch.returns[i];
                critic_loss_sum += verr * verr;
                critic_grad[row][0] = 2.0 * verr / m as f64;
            }

            let ag = ac.actor.backward(&actor_trace, &actor_grad).expect("actor trace");
            ac.actor.sgd_step(&ag, config.actor_lr).expect("actor shapes");
            let cg = ac.critic.backward(&critic_trace, &critic_grad).expect("critic trace");
            ac.critic.sgd_step(&cg, config.critic_lr).expect("critic shapes");
        }
        summary.epochs_run += 1;
        summary.clip_fraction = clipped as f64 / n as f64;
        summary.actor_loss = actor_loss_sum / n as f64;
        summary.critic_loss = critic_loss_sum / n as f64;

        let mut kl_sum = 0.0;
        for step in &batch.steps {
            let new_probs = ac.policy(&step.state);
            kl_sum += kl_divergence(&step.old_probs, &new_probs);
        }
        summary.mean_kl = kl_sum / n as f64;
        if summary.mean_kl > config.kl_bound {
            break;
        }
    }
    Ok(summary)
}

/// Full training run, deterministic per seed. Halts early once the
/// fitness-evaluation budget is exhausted.
pub fn run_ppo(
    config: &PpoConfig,
    env_config: &EnvConfig,
    model: Arc<dyn FitnessModel>,
    budget: u64,
    seed: u64,
) -> Result<RunMetrics, EnvError> {
    let start = Instant::now();
    let tracker = Arc::new(EvalTracker::new(model));
    let mut env = Env::new(env_config.clone(), tracker.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ac = ActorCritic::new(config, env_config.length, &mut rng);

    let mut metrics = RunMetrics::default();
    let mut episode_index = 0usize;
    for epoch in 0..config.epochs {
        if tracker.count() >= budget {
            break;
        }
        let mut batch = collect_trajectories(&mut env, &ac, config, &tracker, budget, &mut rng)?;
        let summary = if batch.is_empty() {
            None
        } else {
            compute_advantages(&mut batch, config.gamma);
            Some(ppo_update(&mut ac, &batch, config, &mut rng).expect("non-empty batch"))
        };

        let bests: Vec<f64> = batch.episodes.iter().map(|e| e.best).collect();
        let batch_avg = bests.iter().sum::<f64>() / bests.len().max(1) as f64;
        let batch_max = bests.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        metrics.rows.push(EpochRow {
            epoch,
            best_so_far: tracker.best_fitness(),
            batch_avg,
            batch_max,
            evals: tracker.count(),
        });
        metrics.kl_per_epoch.push(summary.as_ref().map_or(0.0, |s| s.mean_kl));
        for e in &batch.episodes {
            metrics.scatter.push((episode_index, e.best));
            metrics.episode_lengths.push(e.length);
            episode_index += 1;
        }
    }

    if let Some((seq, fit)) = tracker.best() {
        metrics.best_sequence = Some(seq);
        metrics.best_fitness = Some(fit);
    }
    metrics.total_evals = tracker.count();
    metrics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(metrics)
}
