//! Run-level results shared by all three optimizers.

use crate::seq::RnaSequence;

/// Per-episode record from a collection phase. An episode counts as
/// complete once it ends for any reason, including truncation by the
/// collection quota or the evaluation budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub best: f64,
    /// Accepted steps in the episode.
    pub length: usize,
}

/// One learning-curve row. `batch_avg` / `batch_max` aggregate the episode
/// bests of the epoch (for greedy: the buffer fitnesses after the
/// iteration); `evals` is the cumulative fitness-evaluation count.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub best_so_far: f64,
    pub batch_avg: f64,
    pub batch_max: f64,
    pub evals: u64,
}

/// Everything a single run produces, shaped for the CSV/JSON writers.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub rows: Vec<EpochRow>,
    /// Per-episode `(episode index, episode best fitness)` pairs; filled by
    /// the on-policy runner to expose run-to-run variance.
    pub scatter: Vec<(usize, f64)>,
    /// Accepted-step count of every completed episode.
    pub episode_lengths: Vec<usize>,
    /// Mean policy divergence per update round (PPO only).
    pub kl_per_epoch: Vec<f64>,
    pub best_sequence: Option<RnaSequence>,
    pub best_fitness: Option<f64>,
    pub total_evals: u64,
    pub wall_time_s: f64,
}

impl RunMetrics {
    /// Final best fitness of the run, if anything was evaluated.
    pub fn final_best(&self) -> Option<f64> {
        self.best_fitness
    }

    /// Equality over everything except wall time, for determinism checks.
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        self.rows == other.rows
            && self.scatter == other.scatter
            && self.episode_lengths == other.episode_lengths
            && self.kl_per_epoch == other.kl_per_epoch
            && self.best_sequence == other.best_sequence
            && self.best_fitness == other.best_fitness
            && self.total_evals == other.total_evals
    }

    pub fn assert_invariants(&self) {
        let mut best = f64::NEG_INFINITY;
        let mut evals = 0;
        for row in &self.rows {
            assert!(row.best_so_far >= best, "best_so_far decreased at epoch {}", row.epoch);
            assert!(row.evals >= evals, "evals decreased at epoch {}", row.epoch);
            best = row.best_so_far;
            evals = row.evals;
        }
    }
}

/// Median of a sample; averages the two central values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median over NaN"));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}
