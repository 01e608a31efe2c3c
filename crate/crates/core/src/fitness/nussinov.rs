//! Minimum-energy folding by dynamic programming over spans.

use super::{FoldResult, PairEnergyTable, SecondaryStructure};
use crate::seq::RnaSequence;

/// Returns a structure minimizing total pair energy over all
/// pseudoknot-free structures respecting `min_loop`.
///
/// `E(i,j) = min(E(i+1,j), min_k e(i,k) + E(i+1,k-1) + E(k+1,j))` with `k`
/// ranging over allowed partners of `i` at distance > `min_loop`, and
/// `E(i,j) = 0` for spans too short to pair. O(L^3) time, O(L^2) space.
/// Traceback ties prefer leaving `i` unpaired, then the smallest `k`, so
/// the returned structure is deterministic.
pub fn nussinov_fold(s: &RnaSequence, table: &PairEnergyTable) -> FoldResult {
    let n = s.len();
    let ml = table.min_loop;
    if n < ml + 2 {
        return FoldResult {
            structure: SecondaryStructure::empty(n),
            energy: 0.0,
        };
    }

    // e[i][j] for i <= j; spans shorter than ml+1 stay at the base value 0.
    let mut e = vec![vec![0.0f64; n]; n];
    for d in (ml + 1)..n {
        for i in 0..(n - d) {
            let j = i + d;
            let mut best = e[i + 1][j];
            for k in (i + ml + 1)..=j {
                if let Some(pe) = table.pair_energy(s.base(i), s.base(k)) {
                    let inner = if k >= i + 2 { e[i + 1][k - 1] } else { 0.0 };
                    let right = if k < j { e[k + 1][j] } else { 0.0 };
                    let cand = pe + inner + right;
                    if cand < best {
                        best = cand;
                    }
                }
            }
            e[i][j] = best;
        }
    }

    // Traceback. Energies are exact sums of table entries, so equality
    // comparisons are safe.
    let mut pairs = Vec::new();
    let mut stack = vec![(0usize, n - 1)];
    while let Some((i, j)) = stack.pop() {
        if j <= i || j - i < ml + 1 {
            continue;
        }
        if e[i][j] == e[i + 1][j] {
            stack.push((i + 1, j));
            continue;
        }
        let mut matched = false;
        for k in (i + ml + 1)..=j {
            if let Some(pe) = table.pair_energy(s.base(i), s.base(k)) {
                let inner = if k >= i + 2 { e[i + 1][k - 1] } else { 0.0 };
                let right = if k < j { e[k + 1][j] } else { 0.0 };
                if pe + inner + right == e[i][j] {
                    pairs.push((i, k));
                    if k >= i + 2 {
                        stack.push((i + 1, k - 1));
                    }
                    if k < j {
                        stack.push((k + 1, j));
                    }
                    matched = true;
                    break;
                }
            }
        }
        debug_assert!(matched, "traceback found no branch for ({i},{j})");
    }

    let structure = SecondaryStructure::new(n, pairs);
    let energy = e[0][n - 1];
    debug_assert_eq!(structure.energy(s, table), Some(energy));
    FoldResult { structure, energy }
}
