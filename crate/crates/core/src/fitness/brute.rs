//! Exhaustive-enumeration folding oracle.
//!
//! Enumerates every valid pseudoknot-free pair set by plain recursion (no
//! memoization, no shared machinery with the DP) and returns a
//! minimum-energy one. Exists to cross-check `nussinov_fold`.

use super::{FitnessError, FoldResult, PairEnergyTable, SecondaryStructure};
use crate::seq::RnaSequence;

/// Guard against combinatorial blowup.
pub const BRUTE_FORCE_MAX_LEN: usize = 16;

pub fn brute_force_fold(
    s: &RnaSequence,
    table: &PairEnergyTable,
) -> Result<FoldResult, FitnessError> {
    let n = s.len();
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(FitnessError::SequenceTooLong { len: n, max: BRUTE_FORCE_MAX_LEN });
    }

    let all = enumerate(s, table, 0, n - 1);
    let mut best: Option<(Vec<(usize, usize)>, f64)> = None;
    for pairs in all {
        let energy: f64 = pairs
            .iter()
            .map(|&(i, j)| table.pair_energy(s.base(i), s.base(j)).unwrap())
            .sum();
        let better = match &best {
            Some((_, e)) => energy < *e,
            None => true,
        };
        if better {
            best = Some((pairs, energy));
        }
    }
    let (pairs, energy) = best.expect("the empty structure is always enumerated");
    Ok(FoldResult {
        structure: SecondaryStructure::new(n, pairs),
        energy,
    })
}

/// All valid structures on the closed interval `[i, j]`. Every structure
/// either leaves `i` unpaired or pairs `i` with exactly one admissible `k`,
/// so each is produced exactly once.
fn enumerate(
    s: &RnaSequence,
    table: &PairEnergyTable,
    i: usize,
    j: usize,
) -> Vec<Vec<(usize, usize)>> {
    if j <= i || j - i < table.min_loop + 1 {
        return vec![Vec::new()];
    }
    let mut out = enumerate(s, table, i + 1, j);
    for k in (i + table.min_loop + 1)..=j {
        if table.pair_energy(s.base(i), s.base(k)).is_none() {
            continue;
        }
        let lefts = if k >= i + 2 {
            enumerate(s, table, i + 1, k - 1)
        } else {
            vec![Vec::new()]
        };
        let rights = if k < j {
            enumerate(s, table, k + 1, j)
        } else {
            vec![Vec::new()]
        };
        for left in &lefts {
            for right in &rights {
                let mut pairs = Vec::with_capacity(1 + left.len() + right.len());
                pairs.push((i, k));
                pairs.extend_from_slice(left);
                pairs.extend_from_slice(right);
                out.push(pairs);
            }
        }
    }
    out
}
