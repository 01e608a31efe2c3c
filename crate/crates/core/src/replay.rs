//! Prioritized experience replay (proportional variant).
//!
//! Transitions are stored in a fixed-capacity ring; sampling probability is
//! `p_i^alpha / sum_k p_k^alpha` with `p = |td_error| + eps`, realized by a
//! sum tree over the exponentiated priorities. Importance-sampling weights
//! `(N * P(i))^-beta` are normalized by the batch maximum.

use rand::Rng;
use thiserror::Error;

use crate::seq::{FlipAction, RnaSequence};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,
    #[error("index {index} out of range for {size} stored transitions")]
    IndexOutOfRange { index: usize, size: usize },
}

/// One stored environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: RnaSequence,
    pub action: FlipAction,
    pub next: RnaSequence,
    pub reward: f64,
    pub done: bool,
}

/// Binary sum tree over leaf masses; `total` is the root, point updates
/// propagate the delta along the leaf-to-root path.
#[derive(Debug, Clone)]
struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        SumTree { capacity, nodes: vec![0.0; 2 * capacity] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.capacity + leaf]
    }

    fn set(&mut self, leaf: usize, value: f64) {
        let mut idx = self.capacity + leaf;
        let delta = value - self.nodes[idx];
        while idx >= 1 {
            self.nodes[idx] += delta;
            idx /= 2;
        }
    }

    /// Finds the leaf containing prefix mass `target` in [0, total).
    fn descend(&self, mut target: f64) -> usize {
        let mut idx = 1;
        while idx < self.capacity {
            let left = 2 * idx;
            if target < self.nodes[left] || self.nodes[left + 1] == 0.0 {
                idx = left;
            } else {
                target -= self.nodes[left];
                idx = left + 1;
            }
        }
        idx - self.capacity
    }
}

/// A prioritized sample with the indices needed to feed updated TD errors
/// back via [`PrioritizedBuffer::update_priorities`].
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub transitions: Vec<Transition>,
    pub indices: Vec<usize>,
    /// Importance weights in (0, 1], max-normalized per batch.
    pub weights: Vec<f64>,
}

pub struct PrioritizedBuffer {
    capacity: usize,
    alpha: f64,
    eps: f64,
    entries: Vec<Transition>,
    /// Raw priorities per slot (before the alpha exponent).
    priorities: Vec<f64>,
    tree: SumTree,
    next_slot: usize,
    /// Cached max over `priorities`; rebuilt when the max slot is evicted
    /// or lowered.
    max_priority: f64,
    max_slot: usize,
}

impl PrioritizedBuffer {
    pub const DEFAULT_ALPHA: f64 = 0.6;
    pub const DEFAULT_EPS: f64 = 1e-3;

    pub fn new(capacity: usize, alpha: f64, eps: f64) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        PrioritizedBuffer {
            capacity,
            alpha,
            eps,
            entries: Vec::with_capacity(capacity),
            priorities: Vec::with_capacity(capacity),
            tree: SumTree::new(capacity),
            next_slot: 0,
            max_priority: 1.0,
            max_slot: 0,
        }
    }

    pub fn with_defaults(capacity: usize) -> Self {
        Self::new(capacity, Self::DEFAULT_ALPHA, Self::DEFAULT_EPS)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Current max stored priority, or 1.0 while empty. New transitions
    /// enter at this priority so they are sampled at least once soon.
    pub fn max_priority(&self) -> f64 {
        if self.entries.is_empty() {
            1.0
        } else {
            self.max_priority
        }
    }

    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    /// Root of the sum tree; equals the sum of `p^alpha` over stored slots.
    pub fn tree_total(&self) -> f64 {
        self.tree.total()
    }

    /// Stores a transition at the current max priority, evicting the
    /// oldest entry once at capacity.
    pub fn push(&mut self, t: Transition) {
        let priority = self.max_priority();
        let slot = self.next_slot;
        if self.entries.len() < self.capacity {
            self.entries.push(t);
            self.priorities.push(0.0);
        } else {
            self.entries[slot] = t;
            if slot == self.max_slot {
                // evicting the max holder; recompute below after the write
                self.priorities[slot] = 0.0;
                self.rescan_max();
            }
        }
        self.set_priority(slot, priority);
        self.next_slot = (self.next_slot + 1) % self.capacity;
    }

    fn set_priority(&mut self, slot: usize, priority: f64) {
        let lowered_max = slot == self.max_slot && priority < self.max_priority;
        self.priorities[slot] = priority;
        self.tree.set(slot, priority.powf(self.alpha));
        if priority >= self.max_priority || self.entries.len() == 1 {
            self.max_priority = priority;
            self.max_slot = slot;
        } else if lowered_max {
            self.rescan_max();
        }
    }

    fn rescan_max(&mut self) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &p) in self.priorities.iter().enumerate() {
            if p > best.1 {
                best = (i, p);
            }
        }
        self.max_slot = best.0;
        self.max_priority = best.1;
    }

    /// Stratified sampling: one draw per equal slice of the total mass.
    pub fn sample<R: Rng>(
        &self,
        batch_size: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampleBatch, ReplayError> {
        if self.entries.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let total = self.tree.total();
        let n = self.entries.len() as f64;
        let segment = total / batch_size as f64;

        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        let mut max_weight = 0.0f64;
        for b in 0..batch_size {
            let lo = segment * b as f64;
            let target = lo + rng.gen::<f64>() * segment;
            let mut idx = self.tree.descend(target.min(total * (1.0 - 1e-12)));
            if idx >= self.entries.len() {
                idx = self.entries.len() - 1;
            }
            let prob = self.tree.get(idx) / total;
            let weight = (n * prob).powf(-beta);
            max_weight = max_weight.max(weight);
            indices.push(idx);
            weights.push(weight);
        }
        for w in &mut weights {
            *w /= max_weight;
        }
        let transitions = indices.iter().map(|&i| self.entries[i].clone()).collect();
        Ok(SampleBatch { transitions, indices, weights })
    }

    /// Re-prioritizes sampled slots from their new TD errors:
    /// `p = |td_error| + eps`.
    pub fn update_priorities(
        &mut self,
        indices: &[usize],
        td_errors: &[f64],
    ) -> Result<(), ReplayError> {
        assert_eq!(indices.len(), td_errors.len());
        for &i in indices {
            if i >= self.entries.len() {
                return Err(ReplayError::IndexOutOfRange { index: i, size: self.entries.len() });
            }
        }
        for (&i, &delta) in indices.iter().zip(td_errors) {
            self.set_priority(i, delta.abs() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::Base;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(tag: usize) -> Transition {
        // encode the tag in the reward so evictions are observable
        let s = RnaSequence::parse("AAAA").unwrap();
        Transition {
            state: s.clone(),
            action: FlipAction::new(0, Base::C),
            next: s.apply(FlipAction::new(0, Base::C)).unwrap(),
            reward: tag as f64,
            done: false,
        }
    }

    fn leaf_sum(buf: &PrioritizedBuffer) -> f64 {
        (0..buf.len()).map(|i| buf.priority(i).unwrap().powf(0.6)).sum()
    }

    #[test]
    fn push_into_empty_buffer_uses_unit_priority() {
        let mut buf = PrioritizedBuffer::with_defaults(8);
        let before = buf.tree_total();
        buf.push(transition(0));
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.priority(0), Some(1.0));
        assert!((buf.tree_total() - before - 1.0f64.powf(0.6)).abs() < 1e-12);
    }

    #[test]
    fn ring_evicts_oldest_at_capacity() {
        let mut buf = PrioritizedBuffer::with_defaults(2);
        buf.push(transition(0));
        buf.push(transition(1));
        buf.push(transition(2));
        assert_eq!(buf.len(), 2);
        // slot 0 (the oldest) was overwritten by tag 2
        let stored: Vec<f64> = buf.entries.iter().map(|t| t.reward).collect();
        assert_eq!(stored, vec![2.0, 1.0]);
    }

    #[test]
    fn new_pushes_enter_at_current_max_priority() {
        let mut buf = PrioritizedBuffer::with_defaults(8);
        buf.push(transition(0));
        buf.update_priorities(&[0], &[4.0]).unwrap();
        assert_eq!(buf.priority(0), Some(4.0 + PrioritizedBuffer::DEFAULT_EPS));
        buf.push(transition(1));
        assert_eq!(buf.priority(1), Some(4.0 + PrioritizedBuffer::DEFAULT_EPS));
    }

    #[test]
    fn eviction_of_max_holder_rescans() {
        let mut buf = PrioritizedBuffer::with_defaults(2);
        buf.push(transition(0));
        buf.push(transition(1));
        buf.update_priorities(&[0, 1], &[9.0, 2.0]).unwrap();
        // slot 0 (the max) is evicted next; its replacement enters at the
        // pre-eviction max, after which the max rescan applies
        buf.push(transition(2));
        assert_eq!(buf.priority(0), Some(9.0 + PrioritizedBuffer::DEFAULT_EPS));
        buf.update_priorities(&[0], &[0.0]).unwrap();
        assert_eq!(buf.max_priority(), 2.0 + PrioritizedBuffer::DEFAULT_EPS);
    }

    #[test]
    fn zero_td_error_keeps_priority_positive() {
        let mut buf = PrioritizedBuffer::with_defaults(4);
        buf.push(transition(0));
        buf.update_priorities(&[0], &[0.0]).unwrap();
        assert_eq!(buf.priority(0), Some(PrioritizedBuffer::DEFAULT_EPS));
    }

    #[test]
    fn update_rejects_out_of_range() {
        let mut buf = PrioritizedBuffer::with_defaults(4);
        buf.push(transition(0));
        assert_eq!(
            buf.update_priorities(&[3], &[1.0]),
            Err(ReplayError::IndexOutOfRange { index: 3, size: 1 })
        );
    }

    #[test]
    fn sample_from_empty_fails() {
        let buf = PrioritizedBuffer::with_defaults(4);
        assert_eq!(
            buf.sample(4, 0.4, &mut ChaCha8Rng::seed_from_u64(0)).err(),
            Some(ReplayError::EmptyBuffer)
        );
    }

    #[test]
    fn uniform_priorities_with_full_beta_give_unit_weights() {
        let mut buf = PrioritizedBuffer::with_defaults(4);
        for i in 0..4 {
            buf.push(transition(i));
        }
        let batch = buf.sample(16, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for w in batch.weights {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_samples_uniformly() {
        // chi-square over 10 entries, 9 dof; critical value for p = 0.001
        // is 27.877.
        let mut buf = PrioritizedBuffer::new(10, 0.0, 1e-3);
        for i in 0..10 {
            buf.push(transition(i));
        }
        buf.update_priorities(&(0..10).collect::<Vec<_>>(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0u64; 10];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            let batch = buf.sample(10, 0.4, &mut rng).unwrap();
            for i in batch.indices {
                counts[i] += 1;
            }
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 27.877, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn alpha_one_samples_proportionally() {
        let mut buf = PrioritizedBuffer::new(2, 1.0, 0.0);
        buf.push(transition(0));
        buf.push(transition(1));
        buf.update_priorities(&[0, 1], &[3.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0u64; 2];
        let draws = 100_000;
        for _ in 0..draws {
            let batch = buf.sample(1, 0.4, &mut rng).unwrap();
            counts[batch.indices[0]] += 1;
        }
        // chi-square against 3:1, 1 dof; critical value for p = 0.001 is
        // 10.828.
        let expected = [draws as f64 * 0.75, draws as f64 * 0.25];
        let chi2: f64 = counts
            .iter()
            .zip(expected)
            .map(|(&c, e)| {
                let d = c as f64 - e;
                d * d / e
            })
            .sum();
        assert!(chi2 < 10.828, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn skew_follows_updated_td_errors() {
        let mut buf = PrioritizedBuffer::new(2, 1.0, 1e-3);
        buf.push(transition(0));
        buf.push(transition(1));
        buf.update_priorities(&[0, 1], &[0.1, 5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0u64; 2];
        for _ in 0..20_000 {
            let batch = buf.sample(1, 0.4, &mut rng).unwrap();
            counts[batch.indices[0]] += 1;
        }
        assert!(counts[1] > counts[0] * 10, "counts = {counts:?}");
    }

    #[test]
    fn root_matches_leaf_sum_over_randomized_ops() {
        let mut buf = PrioritizedBuffer::with_defaults(64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for step in 0..5_000 {
            if buf.is_empty() || rng.gen_bool(0.4) {
                buf.push(transition(step));
            } else {
                let i = rng.gen_range(0..buf.len());
                let delta = rng.gen_range(-10.0..10.0);
                buf.update_priorities(&[i], &[delta]).unwrap();
            }
            let total = buf.tree_total();
            let expect = leaf_sum(&buf);
            assert!(
                (total - expect).abs() <= 1e-9 * expect.max(1.0),
                "root {total} vs leaves {expect} at step {step}"
            );
        }
    }
}
