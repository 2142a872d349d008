//! Analytic removal scoring.
//!
//! Removing node `k` lowers the expected number of fresh exposures next step
//! by
//!
//! ```text
//! f(k) = (1 - p_k) q_k (1 - prod_i (1 - G_ki beta p_i))
//!      + sum_{i != k} G_ik beta p_k (1 - p_i) q_i prod_{j != k} (1 - G_ij beta p_j)
//! ```
//!
//! so the greedy step removes argmax f, which is exactly argmin of the
//! post-removal expectation. The first term is the infection risk `k` itself
//! no longer faces; the second is the risk `k` poses to each susceptible
//! neighbor, weighted by the chance nobody else infects that neighbor.

use ndarray::{Array1, Array2, ArrayView1};

use crate::graph::ContactNetwork;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Expected fresh exposures next step under adjacency `g`:
/// `sum_i (1 - p_i) q_i (1 - prod_j (1 - G_ij beta p_j))`.
pub fn expected_new_exposures<F: Scalar>(
    g: &Array2<F>,
    p: ArrayView1<'_, F>,
    q_one: &[bool],
    beta: F,
) -> F {
    let n = p.len();
    let mut total = F::zero();
    for i in 0..n {
        if !q_one[i] {
            continue;
        }
        let mut none = F::one();
        for j in 0..n {
            if g[(i, j)] != F::zero() {
                none = none * (F::one() - beta * p[j]);
            }
        }
        total = total + (F::one() - p[i]) * (F::one() - none);
    }
    total
}

/// `f(k)` for every node under adjacency `g`. Rows and columns of removed
/// nodes must already be zero; their scores come out zero.
pub fn removal_scores<F: Scalar>(
    g: &Array2<F>,
    p: ArrayView1<'_, F>,
    q_one: &[bool],
    beta: F,
) -> Result<Array1<F>> {
    let n = p.len();
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} adjacency"),
            got: format!("{}x{}", g.nrows(), g.ncols()),
        });
    }
    if q_one.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("q vector of length {n}"),
            got: format!("{}", q_one.len()),
        });
    }
    let mut scores = Array1::zeros(n);
    for k in 0..n {
        let mut own_risk = F::zero();
        if q_one[k] {
            let mut none = F::one();
            for i in 0..n {
                if g[(k, i)] != F::zero() {
                    none = none * (F::one() - beta * p[i]);
                }
            }
            own_risk = (F::one() - p[k]) * (F::one() - none);
        }
        let mut posed_risk = F::zero();
        if p[k] != F::zero() {
            for i in 0..n {
                if i == k || g[(i, k)] == F::zero() || !q_one[i] {
                    continue;
                }
                let mut none_else = F::one();
                for j in 0..n {
                    if j != k && g[(i, j)] != F::zero() {
                        none_else = none_else * (F::one() - beta * p[j]);
                    }
                }
                posed_risk = posed_risk + beta * p[k] * (F::one() - p[i]) * none_else;
            }
        }
        scores[k] = own_risk + posed_risk;
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovalSelection {
    pub picks: Vec<usize>,
    /// True when fewer active candidates existed than requested.
    pub shortage: bool,
    /// Rounds where every score was zero and the lowest-id active node was
    /// taken instead.
    pub degenerate_rounds: usize,
}

/// Greedy selection of `m2` nodes to quarantine. Each round scores all
/// active nodes against the current working adjacency, takes the argmax
/// (ties toward the lower id), and zeroes the pick's row and column before
/// the next round. Already-removed nodes are never candidates.
pub fn select_remove_nodes<F: Scalar>(
    net: &ContactNetwork,
    p: ArrayView1<'_, F>,
    q_one: &[bool],
    beta: F,
    m2: usize,
) -> Result<RemovalSelection> {
    let n = net.n();
    if p.len() != n || q_one.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} nodes"),
            got: format!("p of {} and q of {}", p.len(), q_one.len()),
        });
    }
    let mut g: Array2<F> = net.active_observable_adjacency();
    let mut active: Vec<bool> = (0..n).map(|k| !net.is_removed(k)).collect();
    let mut picks = Vec::with_capacity(m2);
    let mut degenerate_rounds = 0;
    for _ in 0..m2 {
        let scores = removal_scores(&g, p, q_one, beta)?;
        let mut best: Option<(usize, F)> = None;
        for k in 0..n {
            if !active[k] {
                continue;
            }
            match best {
                Some((_, s)) if scores[k] <= s => {}
                _ => best = Some((k, scores[k])),
            }
        }
        let Some((pick, score)) = best else {
            log::warn!("removal shortage: only {} of {m2} candidates", picks.len());
            return Ok(RemovalSelection { picks, shortage: true, degenerate_rounds });
        };
        if score == F::zero() {
            degenerate_rounds += 1;
            log::debug!("all removal scores zero; taking lowest-id active node {pick}");
        }
        picks.push(pick);
        active[pick] = false;
        for j in 0..n {
            g[(pick, j)] = F::zero();
            g[(j, pick)] = F::zero();
        }
    }
    Ok(RemovalSelection { picks, shortage: false, degenerate_rounds })
}
