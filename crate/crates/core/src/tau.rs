//! AP rank correlation.
//!
//! For an evaluated ranking compared against a reference ranking of the same
//! `N` items,
//!
//! ```text
//! tau_ap = 2 / (N - 1) * sum_{i=2..N} C(i) / (i - 1)  -  1
//! ```
//!
//! where `C(i)` counts the items above position `i` of the evaluated ranking
//! that the reference also places above the item at position `i`. Errors near
//! the top weigh more than errors near the bottom.

use crate::error::{ListenError, Result};
use crate::ranking::Ranking;

/// Correlation value in `[-1, 1]`; `1` means identical orders.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TauAp(f64);

impl TauAp {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<TauAp> for f64 {
    fn from(t: TauAp) -> f64 {
        t.0
    }
}

/// AP correlation of `evaluated` against `reference`.
///
/// Lists of fewer than two items cannot be disrupted and score `1.0`.
pub fn tau_ap(evaluated: &Ranking, reference: &Ranking) -> Result<TauAp> {
    tau_ap_orders(&evaluated.order, &reference.order)
}

/// Same as [`tau_ap`] on bare item orders.
pub fn tau_ap_orders(evaluated: &[usize], reference: &[usize]) -> Result<TauAp> {
    let n = reference.len();
    if evaluated.len() != n {
        return Err(ListenError::Domain(format!(
            "rankings over different item sets (sizes {} and {n})",
            evaluated.len()
        )));
    }
    let ref_pos = positions_checked(reference)?;
    let mut seen = vec![false; n];
    for &item in evaluated {
        if item >= n || std::mem::replace(&mut seen[item], true) {
            return Err(ListenError::Domain(
                "evaluated ranking is not a permutation of the reference items".to_string(),
            ));
        }
    }
    let mut scratch = TauScratch::default();
    Ok(TauAp(scratch.compute(evaluated, &ref_pos)))
}

fn positions_checked(order: &[usize]) -> Result<Vec<usize>> {
    let n = order.len();
    let mut pos = vec![usize::MAX; n];
    for (p, &item) in order.iter().enumerate() {
        if item >= n || pos[item] != usize::MAX {
            return Err(ListenError::Domain(
                "reference ranking is not a permutation".to_string(),
            ));
        }
        pos[item] = p;
    }
    Ok(pos)
}

/// Reusable Fenwick-tree buffer for repeated evaluations against one
/// reference. Inputs are trusted to be permutations.
#[derive(Debug, Default, Clone)]
pub(crate) struct TauScratch {
    tree: Vec<u32>,
}

impl TauScratch {
    /// `ref_pos[item]` is the item's position in the reference ranking.
    pub(crate) fn compute(&mut self, evaluated: &[usize], ref_pos: &[usize]) -> f64 {
        let n = evaluated.len();
        if n < 2 {
            return 1.0;
        }
        self.tree.clear();
        self.tree.resize(n + 1, 0);
        let mut sum = 0.0;
        for (i, &item) in evaluated.iter().enumerate() {
            let r = ref_pos[item];
            if i > 0 {
                // earlier items whose reference position is above r
                let mut count = 0u32;
                let mut k = r;
                while k > 0 {
                    count += self.tree[k];
                    k &= k - 1;
                }
                sum += f64::from(count) / i as f64;
            }
            let mut k = r + 1;
            while k <= n {
                self.tree[k] += 1;
                k += k & k.wrapping_neg();
            }
        }
        2.0 / (n - 1) as f64 * sum - 1.0
    }
}
