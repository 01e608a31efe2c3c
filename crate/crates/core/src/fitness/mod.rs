//! The optimization objective: negated minimum free energy of a sequence's
//! pseudoknot-free secondary structure.
//!
//! Energies are pair-additive over a small table (GC -3, AU -2, GU -1,
//! everything else disallowed) with a hairpin constraint of `min_loop`
//! unpaired bases. [`nussinov::nussinov_fold`] computes the optimum by
//! dynamic programming; [`brute::brute_force_fold`] enumerates every valid
//! structure and exists to cross-check the DP. [`external`] adapts an
//! RNAfold-style subprocess for thermodynamically faithful energies.

mod brute;
mod external;
mod nussinov;

pub use brute::brute_force_fold;
pub use external::{parse_fold_line, ExternalModel};
pub use nussinov::nussinov_fold;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::seq::RnaSequence;

#[derive(Debug, Error, PartialEq)]
pub enum FitnessError {
    #[error("sequence length {len} exceeds brute-force limit {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("external folding program unavailable: {reason}")]
    ProgramUnavailable { reason: String },
    #[error("unexpected reply from folding program: {line:?}")]
    ProtocolError { line: String },
    #[error("dot-bracket length {got} does not match sequence length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid dot-bracket string: {0}")]
    BadDotBracket(String),
}

/// Energies per unordered base pair, in kcal/mol-like units. Pairs not in
/// the table are disallowed. `min_loop` is the minimum number of unpaired
/// bases enclosed by a hairpin.
#[derive(Debug, Clone, Copy)]
pub struct PairEnergyTable {
    pub gc: f64,
    pub au: f64,
    pub gu: f64,
    pub min_loop: usize,
}

impl Default for PairEnergyTable {
    fn default() -> Self {
        PairEnergyTable {
            gc: -3.0,
            au: -2.0,
            gu: -1.0,
            min_loop: 3,
        }
    }
}

impl PairEnergyTable {
    /// Energy of pairing `a` with `b`, or `None` when disallowed.
    /// Symmetric in its arguments.
    pub fn pair_energy(&self, a: crate::seq::Base, b: crate::seq::Base) -> Option<f64> {
        use crate::seq::Base::*;
        match (a, b) {
            (G, C) | (C, G) => Some(self.gc),
            (A, U) | (U, A) => Some(self.au),
            (G, U) | (U, G) => Some(self.gu),
            _ => None,
        }
    }

    /// True when positions `i < j` may pair: allowed bases and at least
    /// `min_loop` enclosed positions.
    pub fn can_pair(&self, s: &RnaSequence, i: usize, j: usize) -> bool {
        j > i && j - i - 1 >= self.min_loop && self.pair_energy(s.base(i), s.base(j)).is_some()
    }
}

/// A pseudoknot-free set of base pairs over a sequence of length `len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecondaryStructure {
    len: usize,
    pairs: Vec<(usize, usize)>,
}

impl SecondaryStructure {
    /// Builds a structure from `(i, j)` pairs with `i < j`. Pairs are kept
    /// sorted by opening index.
    pub fn new(len: usize, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        SecondaryStructure { len, pairs }
    }

    pub fn empty(len: usize) -> Self {
        SecondaryStructure { len, pairs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Renders the structure in dot-bracket notation.
    pub fn dot_bracket(&self) -> String {
        let mut chars = vec!['.'; self.len];
        for &(i, j) in &self.pairs {
            chars[i] = '(';
            chars[j] = ')';
        }
        chars.into_iter().collect()
    }

    /// Parses dot-bracket notation back into a pair set.
    pub fn from_dot_bracket(text: &str) -> Result<Self, FitnessError> {
        let mut stack = Vec::new();
        let mut pairs = Vec::new();
        for (i, c) in text.chars().enumerate() {
            match c {
                '(' => stack.push(i),
                ')' => {
                    let open = stack
                        .pop()
                        .ok_or_else(|| FitnessError::BadDotBracket(text.to_string()))?;
                    pairs.push((open, i));
                }
                '.' => {}
                _ => return Err(FitnessError::BadDotBracket(text.to_string())),
            }
        }
        if !stack.is_empty() {
            return Err(FitnessError::BadDotBracket(text.to_string()));
        }
        Ok(SecondaryStructure::new(text.chars().count(), pairs))
    }

    /// Checks every structural invariant against a sequence and table:
    /// indices in range and used at most once, no pseudoknots, every pair
    /// allowed and outside the hairpin exclusion zone.
    pub fn check_valid(&self, s: &RnaSequence, table: &PairEnergyTable) -> Result<(), String> {
        if self.len != s.len() {
            return Err(format!("structure length {} != sequence length {}", self.len, s.len()));
        }
        let mut used = vec![false; self.len];
        for &(i, j) in &self.pairs {
            if i >= j || j >= self.len {
                return Err(format!("bad pair ({i},{j})"));
            }
            if used[i] || used[j] {
                return Err(format!("index reused in pair ({i},{j})"));
            }
            used[i] = true;
            used[j] = true;
            if j - i - 1 < table.min_loop {
                return Err(format!("pair ({i},{j}) violates min_loop {}", table.min_loop));
            }
            if table.pair_energy(s.base(i), s.base(j)).is_none() {
                return Err(format!(
                    "pair ({i},{j}) = {}{} not allowed",
                    s.base(i).to_char(),
                    s.base(j).to_char()
                ));
            }
        }
        for &(i, j) in &self.pairs {
            for &(k, l) in &self.pairs {
                if i < k && k < j && j < l {
                    return Err(format!("pseudoknot between ({i},{j}) and ({k},{l})"));
                }
            }
        }
        Ok(())
    }

    /// Total energy of the structure under the table. `None` if any pair is
    /// disallowed.
    pub fn energy(&self, s: &RnaSequence, table: &PairEnergyTable) -> Option<f64> {
        self.pairs
            .iter()
            .map(|&(i, j)| table.pair_energy(s.base(i), s.base(j)))
            .sum()
    }
}

impl fmt::Display for SecondaryStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dot_bracket())
    }
}

/// A minimum-energy structure together with its total energy.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub structure: SecondaryStructure,
    pub energy: f64,
}

/// Evaluation capability: sequence in, fitness out. Implementations must be
/// deterministic. Fitness is the negated fold energy, so higher is better.
pub trait FitnessModel: Send + Sync {
    fn fitness(&self, s: &RnaSequence) -> Result<f64, FitnessError>;
}

/// The built-in objective: fitness = -energy of the Nussinov-optimal
/// structure. Pure and infallible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NussinovModel {
    pub table: PairEnergyTable,
}

impl NussinovModel {
    pub fn new(table: PairEnergyTable) -> Self {
        NussinovModel { table }
    }

    pub fn fold(&self, s: &RnaSequence) -> FoldResult {
        nussinov_fold(s, &self.table)
    }
}

impl FitnessModel for NussinovModel {
    fn fitness(&self, s: &RnaSequence) -> Result<f64, FitnessError> {
        // 0.0 - e rather than -e keeps zero energies at +0.0
        Ok(0.0 - self.fold(s).energy)
    }
}

/// Test-friendly model backed by a closure.
pub struct ClosureModel<F: Fn(&RnaSequence) -> f64 + Send + Sync>(pub F);

impl<F: Fn(&RnaSequence) -> f64 + Send + Sync> FitnessModel for ClosureModel<F> {
    fn fitness(&self, s: &RnaSequence) -> Result<f64, FitnessError> {
        Ok((self.0)(s))
    }
}

/// Wraps a model, counting evaluations and remembering the best sequence
/// seen. Every optimizer routes its objective calls through one of these;
/// the count is the budget currency and the running best feeds the
/// best-so-far learning curves.
pub struct EvalTracker {
    inner: Arc<dyn FitnessModel>,
    count: AtomicU64,
    best: Mutex<Option<(RnaSequence, f64)>>,
}

impl EvalTracker {
    pub fn new(inner: Arc<dyn FitnessModel>) -> Self {
        EvalTracker {
            inner,
            count: AtomicU64::new(0),
            best: Mutex::new(None),
        }
    }

    /// Number of fitness evaluations so far.
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    /// Best `(sequence, fitness)` evaluated so far.
    pub fn best(&self) -> Option<(RnaSequence, f64)> {
        self.best.lock().unwrap().clone()
    }

    pub fn best_fitness(&self) -> f64 {
        self.best().map(|(_, f)| f).unwrap_or(f64::NEG_INFINITY)
    }
}

impl FitnessModel for EvalTracker {
    fn fitness(&self, s: &RnaSequence) -> Result<f64, FitnessError> {
        let value = self.inner.fitness(s)?;
        self.count.fetch_add(1, Ordering::Relaxed);
        let mut best = self.best.lock().unwrap();
        let improved = match &*best {
            Some((_, f)) => value > *f,
            None => true,
        };
        if improved {
            *best = Some((s.clone(), value));
        }
        Ok(value)
    }
}
