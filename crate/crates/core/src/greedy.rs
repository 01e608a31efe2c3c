//! Buffered hill climbing in the style of directed evolution: keep a pool
//! of sequences, mutate random members, and keep a mutant only when it
//! strictly improves on its parent.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fitness::{EvalTracker, FitnessError, FitnessModel};
use crate::metrics::{EpochRow, RunMetrics};
use crate::seq::RnaSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    /// Pool size N.
    pub buffer_size: usize,
    /// Members mutated per iteration, sampled without replacement.
    pub sample_size: usize,
    pub max_iterations: usize,
    /// Flips applied per proposal.
    pub mutations: usize,
    /// Improvement-free iterations tolerated before stopping.
    pub patience: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            buffer_size: 100,
            sample_size: 32,
            max_iterations: 1000,
            mutations: 1,
            patience: 50,
        }
    }
}

/// Pool of (sequence, fitness) pairs; the stored fitness is always the
/// model's value for the stored sequence.
#[derive(Debug, Clone)]
pub struct GreedyBuffer {
    entries: Vec<(RnaSequence, f64)>,
}

impl GreedyBuffer {
    /// Fills the pool with `n` uniformly random evaluated sequences.
    pub fn init<R: Rng>(
        n: usize,
        length: usize,
        model: &dyn FitnessModel,
        rng: &mut R,
    ) -> Result<Self, FitnessError> {
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let s = RnaSequence::random(rng, length).expect("length >= 1");
            let f = model.fitness(&s)?;
            entries.push((s, f));
        }
        Ok(GreedyBuffer { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(RnaSequence, f64)] {
        &self.entries
    }

    pub fn max_fitness(&self) -> f64 {
        self.entries.iter().map(|(_, f)| *f).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_fitness(&self) -> f64 {
        self.entries.iter().map(|(_, f)| *f).sum::<f64>() / self.entries.len().max(1) as f64
    }
}

/// Applies `k` uniformly random flips in sequence; later flips may land on
/// an earlier flip's position, so the Hamming distance is at most `k`.
pub fn mutate<R: Rng>(s: &RnaSequence, rng: &mut R, k: usize) -> RnaSequence {
    let mut out = s.clone();
    for _ in 0..k {
        let position = rng.gen_range(0..out.len());
        let others = out.base(position).others();
        let target = others[rng.gen_range(0..others.len())];
        out = out.apply(crate::seq::FlipAction::new(position, target)).expect("valid flip");
    }
    out
}

/// One round: sample `sample_size` pool members without replacement,
/// propose one mutant each, and keep a mutant only when its fitness
/// strictly exceeds its parent's. Returns whether anything improved.
pub fn greedy_iteration<R: Rng>(
    buf: &mut GreedyBuffer,
    config: &GreedyConfig,
    model: &dyn FitnessModel,
    rng: &mut R,
) -> Result<bool, FitnessError> {
    let n = config.sample_size.min(buf.len());
    let chosen = index::sample(rng, buf.len(), n);
    let mut improved = false;
    for i in chosen.iter() {
        let mutant = mutate(&buf.entries[i].0, rng, config.mutations);
        let fitness = model.fitness(&mutant)?;
        if fitness > buf.entries[i].1 {
            buf.entries[i] = (mutant, fitness);
            improved = true;
        }
    }
    Ok(improved)
}

/// Full run, deterministic per seed. Initialization is capped at the
/// budget (so a tiny budget yields a smaller pool); afterwards the final
/// iteration's sample shrinks to the remaining budget, keeping the total
/// evaluation count at or below `budget` exactly.
pub fn run_greedy(
    config: &GreedyConfig,
    length: usize,
    model: Arc<dyn FitnessModel>,
    budget: u64,
    seed: u64,
) -> Result<RunMetrics, FitnessError> {
    let start = Instant::now();
    let tracker = Arc::new(EvalTracker::new(model));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pool = (config.buffer_size as u64).min(budget) as usize;
    let mut buf = GreedyBuffer::init(pool, length, tracker.as_ref(), &mut rng)?;

    let mut metrics = RunMetrics::default();
    let push_row = |metrics: &mut RunMetrics, epoch: usize, buf: &GreedyBuffer| {
        metrics.rows.push(EpochRow {
            epoch,
            best_so_far: tracker.best_fitness(),
            batch_avg: buf.mean_fitness(),
            batch_max: buf.max_fitness(),
            evals: tracker.count(),
        });
    };
    push_row(&mut metrics, 0, &buf);

    let mut since_improvement = 0usize;
    for iteration in 1..=config.max_iterations {
        if tracker.count() >= budget || since_improvement >= config.patience {
            break;
        }
        let remaining = (budget - tracker.count()) as usize;
        let step = GreedyConfig { sample_size: config.sample_size.min(remaining), ..*config };
        let improved = greedy_iteration(&mut buf, &step, tracker.as_ref(), &mut rng)?;
        since_improvement = if improved { 0 } else { since_improvement + 1 };
        push_row(&mut metrics, iteration, &buf);
    }

    if let Some((seq, fit)) = tracker.best() {
        metrics.best_sequence = Some(seq);
        metrics.best_fitness = Some(fit);
    }
    metrics.total_evals = tracker.count();
    metrics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{ClosureModel, NussinovModel};
    use crate::seq::Base;

    fn seeded(n: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(n)
    }

    fn hamming(a: &RnaSequence, b: &RnaSequence) -> usize {
        a.bases().iter().zip(b.bases()).filter(|(x, y)| x != y).count()
    }

    /// Counts A's; easy to reason about uphill and downhill moves.
    fn count_a_model() -> ClosureModel<impl Fn(&RnaSequence) -> f64> {
        ClosureModel(|s: &RnaSequence| {
            s.bases().iter().filter(|&&b| b == Base::A).count() as f64
        })
    }

    #[test]
    fn single_mutation_is_hamming_one_and_deterministic() {
        let s = RnaSequence::parse("GGCCAAUU").unwrap();
        let mut rng = seeded(0);
        for _ in 0..100 {
            let m = mutate(&s, &mut rng, 1);
            assert_eq!(hamming(&s, &m), 1);
        }
        let a = mutate(&s, &mut seeded(1), 1);
        let b = mutate(&s, &mut seeded(1), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn double_mutation_stays_within_hamming_two() {
        let s = RnaSequence::parse("ACGUACGU").unwrap();
        let mut rng = seeded(2);
        let mut seen_distances = std::collections::HashSet::new();
        for _ in 0..2_000 {
            let m = mutate(&s, &mut rng, 2);
            let d = hamming(&s, &m);
            assert!(d <= 2);
            seen_distances.insert(d);
        }
        // revisiting the first flip's position can cancel it entirely
        assert!(seen_distances.contains(&0));
        assert!(seen_distances.contains(&2));
    }

    #[test]
    fn mutation_distribution_is_uniform() {
        // L=2: 6 distinct single-flip mutants; chi-square with 5 dof,
        // critical value 20.515 for p = 0.001.
        let s = RnaSequence::parse("AU").unwrap();
        let mut rng = seeded(3);
        let mut counts = std::collections::HashMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            let m = mutate(&s, &mut rng, 1);
            *counts.entry(m.to_string()).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 20.515, "chi2 = {chi2}");
    }

    #[test]
    fn equal_fitness_mutant_keeps_incumbent() {
        let model = ClosureModel(|_: &RnaSequence| 1.0);
        let mut rng = seeded(4);
        let mut buf = GreedyBuffer::init(10, 6, &model, &mut rng).unwrap();
        let before: Vec<RnaSequence> = buf.entries().iter().map(|(s, _)| s.clone()).collect();
        let improved =
            greedy_iteration(&mut buf, &GreedyConfig::default(), &model, &mut rng).unwrap();
        assert!(!improved);
        let after: Vec<RnaSequence> = buf.entries().iter().map(|(s, _)| s.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn all_worse_mutants_leave_buffer_unchanged() {
        // all-A pool under the A-counting objective: every flip is downhill
        let model = count_a_model();
        let all_a = RnaSequence::parse("AAAAAA").unwrap();
        let mut buf = GreedyBuffer {
            entries: vec![(all_a.clone(), 6.0); 8],
        };
        let mut rng = seeded(5);
        let improved =
            greedy_iteration(&mut buf, &GreedyConfig::default(), &model, &mut rng).unwrap();
        assert!(!improved);
        for (s, f) in buf.entries() {
            assert_eq!(s, &all_a);
            assert_eq!(*f, 6.0);
        }
    }

    #[test]
    fn pool_max_is_monotone_and_fitness_stays_consistent() {
        let model = NussinovModel::default();
        let mut rng = seeded(6);
        let mut buf = GreedyBuffer::init(20, 9, &model, &mut rng).unwrap();
        let config = GreedyConfig { sample_size: 8, ..GreedyConfig::default() };
        let mut best = buf.max_fitness();
        for _ in 0..30 {
            greedy_iteration(&mut buf, &config, &model, &mut rng).unwrap();
            assert!(buf.max_fitness() >= best);
            best = buf.max_fitness();
            assert_eq!(buf.len(), 20);
            for (s, f) in buf.entries() {
                assert_eq!(*f, model.fitness(s).unwrap());
            }
        }
    }

    #[test]
    fn run_is_seed_deterministic() {
        let config = GreedyConfig { buffer_size: 20, sample_size: 8, ..GreedyConfig::default() };
        let model: Arc<dyn FitnessModel> = Arc::new(NussinovModel::default());
        let a = run_greedy(&config, 8, model.clone(), 300, 7).unwrap();
        let b = run_greedy(&config, 8, model, 300, 7).unwrap();
        assert!(a.same_results(&b));
        a.assert_invariants();
        assert!(a.total_evals <= 300);
    }

    #[test]
    fn zero_patience_stops_after_initialization() {
        let config = GreedyConfig { buffer_size: 15, patience: 0, ..GreedyConfig::default() };
        let model: Arc<dyn FitnessModel> = Arc::new(NussinovModel::default());
        let m = run_greedy(&config, 8, model, 1_000, 8).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.total_evals, 15);
        assert_eq!(m.rows[0].best_so_far, m.rows[0].batch_max);
        assert_eq!(m.best_fitness, Some(m.rows[0].batch_max));
    }

    #[test]
    fn tiny_budget_caps_initialization() {
        let config = GreedyConfig::default(); // pool would be 100
        let model: Arc<dyn FitnessModel> = Arc::new(NussinovModel::default());
        let m = run_greedy(&config, 8, model, 30, 9).unwrap();
        assert_eq!(m.total_evals, 30);
        assert_eq!(m.rows.len(), 1, "no budget left for iterations");
    }

    #[test]
    fn budget_is_met_exactly_by_shrinking_the_final_sample() {
        // init 100, then 32 + 18 = 150 total
        let model: Arc<dyn FitnessModel> = Arc::new(NussinovModel::default());
        let config = GreedyConfig { patience: 1_000, ..GreedyConfig::default() };
        let m = run_greedy(&config, 12, model, 150, 10).unwrap();
        assert_eq!(m.total_evals, 150);
        assert_eq!(m.rows.last().unwrap().evals, 150);
    }

    #[test]
    fn uphill_objective_reaches_the_optimum() {
        // counting A's has no local optima, so the pool best must reach L
        let model: Arc<dyn FitnessModel> = Arc::new(count_a_model());
        let config = GreedyConfig { buffer_size: 10, sample_size: 10, ..GreedyConfig::default() };
        let m = run_greedy(&config, 6, model, 5_000, 11).unwrap();
        assert_eq!(m.best_fitness, Some(6.0));
    }
}
