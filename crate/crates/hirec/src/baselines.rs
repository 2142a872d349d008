//! Spectral and degree-based node removal baselines. All selectors score the
//! observable graph only: known edges between non-removed nodes.
//!
//! The spectral family targets the top adjacency eigenvalue. `netshield`
//! greedily maximizes the shield value from one eigenpair, `netshield_plus`
//! re-solves the eigenpair between batches of removals, and `eigendrop`
//! recomputes the eigenvalue for every candidate removal.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::graph::ContactNetwork;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Principal eigenpair of a symmetric non-negative matrix, found by power
/// iteration on the shifted matrix `A + I` so that bipartite spectra (where
/// the extreme eigenvalues come in a +/- pair) still converge.
#[derive(Debug, Clone)]
pub struct Spectrum<F> {
    /// Top eigenvalue of `A` itself (the shift is subtracted back out).
    pub lambda: F,
    /// Unit eigenvector, non-negative up to rounding.
    pub u: Array1<F>,
    pub iterations: usize,
    pub converged: bool,
}

const POWER_ITERATION_CAP: usize = 10_000;

fn default_tol<F: Scalar>() -> F {
    F::from_f64(1e-10).max(F::epsilon() * F::from_f64(100.0))
}

pub fn principal_eigenpair<F: Scalar>(a: ArrayView2<'_, F>) -> Result<Spectrum<F>> {
    principal_eigenpair_with(a, default_tol::<F>(), POWER_ITERATION_CAP)
}

/// Power iteration with an explicit residual tolerance and iteration cap.
/// Converged means `||A u - lambda u|| <= tol * max(1, |lambda|)`.
pub fn principal_eigenpair_with<F: Scalar>(
    a: ArrayView2<'_, F>,
    tol: F,
    max_iter: usize,
) -> Result<Spectrum<F>> {
    let n = check_square(&a)?;
    let u = Array1::from_elem(n, F::from_f64(1.0 / (n as f64).sqrt()));
    power_loop(a, u, tol, max_iter)
}

/// Power iteration from a caller-supplied start vector, normalized here. A
/// start with no mass on the dominant component converges to the wrong
/// eigenpair, so callers must guarantee some; a zero start falls back to
/// uniform.
fn principal_eigenpair_seeded<F: Scalar>(
    a: ArrayView2<'_, F>,
    u0: ArrayView1<'_, F>,
    tol: F,
    max_iter: usize,
) -> Result<Spectrum<F>> {
    let n = check_square(&a)?;
    if u0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("start vector of length {n}"),
            got: format!("{}", u0.len()),
        });
    }
    let norm = u0.dot(&u0).sqrt();
    let u = if norm > F::zero() {
        u0.to_owned() / norm
    } else {
        Array1::from_elem(n, F::from_f64(1.0 / (n as f64).sqrt()))
    };
    power_loop(a, u, tol, max_iter)
}

fn check_square<F: Scalar>(a: &ArrayView2<'_, F>) -> Result<usize> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} matrix"),
            got: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    if n == 0 {
        return Err(Error::Config("cannot take the spectrum of an empty matrix".into()));
    }
    Ok(n)
}

fn power_loop<F: Scalar>(
    a: ArrayView2<'_, F>,
    mut u: Array1<F>,
    tol: F,
    max_iter: usize,
) -> Result<Spectrum<F>> {
    let n = a.nrows();
    let one = F::one();
    for it in 1..=max_iter {
        let w = a.dot(&u) + &u;
        let shifted = u.dot(&w);
        let mut res = F::zero();
        for i in 0..n {
            let d = w[i] - shifted * u[i];
            res = res + d * d;
        }
        let res = res.sqrt();
        let norm = w.dot(&w).sqrt();
        if norm <= F::zero() {
            return Ok(Spectrum { lambda: F::zero(), u, iterations: it, converged: false });
        }
        u = w / norm;
        if res <= tol * one.max(shifted.abs()) {
            return Ok(Spectrum { lambda: shifted - one, u, iterations: it, converged: true });
        }
    }
    let lambda = u.dot(&a.dot(&u));
    Ok(Spectrum { lambda, u, iterations: max_iter, converged: false })
}

fn check_mask<F: Scalar>(a: &ArrayView2<'_, F>, active: &[bool]) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n || active.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} matrix with {n} activity flags"),
            got: format!("{}x{} with {}", a.nrows(), a.ncols(), active.len()),
        });
    }
    Ok(())
}

/// Active nodes in descending degree order, ties to the lower id.
fn degree_order<F: Scalar>(a: ArrayView2<'_, F>, active: &[bool], m: usize) -> Vec<usize> {
    let n = a.nrows();
    let deg: Vec<usize> = (0..n)
        .map(|k| {
            if !active[k] {
                return 0;
            }
            (0..n).filter(|&j| active[j] && a[(k, j)] != F::zero()).count()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).filter(|&k| active[k]).collect();
    order.sort_by_key(|&k| (std::cmp::Reverse(deg[k]), k));
    order.truncate(m);
    order
}

/// Greedy shield-value maximization from a single eigenpair. Each round
/// scores the remaining candidates as
/// `2 lambda u_v^2 - 2 u_v sum_{s picked} A_vs u_s` and takes the argmax,
/// ties to the lower id. Falls back to degree order if the eigenpair does
/// not converge.
pub fn netshield_on_matrix<F: Scalar>(
    a: ArrayView2<'_, F>,
    active: &[bool],
    m: usize,
) -> Result<Vec<usize>> {
    check_mask(&a, active)?;
    if m == 0 {
        return Ok(Vec::new());
    }
    let spec = principal_eigenpair(a)?;
    if !spec.converged {
        log::warn!(
            "power iteration stalled after {} iterations; selecting by degree instead",
            spec.iterations
        );
        return Ok(degree_order(a, active, m));
    }
    let two = F::from_f64(2.0);
    let n = a.nrows();
    let mut in_set = vec![false; n];
    let mut picks = Vec::new();
    for _ in 0..m {
        let mut best: Option<(usize, F)> = None;
        for v in 0..n {
            if !active[v] || in_set[v] {
                continue;
            }
            let mut link = F::zero();
            for &s in &picks {
                link = link + a[(v, s)] * spec.u[s];
            }
            let score = two * spec.lambda * spec.u[v] * spec.u[v] - two * spec.u[v] * link;
            match best {
                Some((_, bs)) if score <= bs => {}
                _ => best = Some((v, score)),
            }
        }
        match best {
            Some((v, _)) => {
                in_set[v] = true;
                picks.push(v);
            }
            None => break,
        }
    }
    Ok(picks)
}

/// Shield selection in batches of `b`: picked nodes are deleted from the
/// matrix and the eigenpair is recomputed before the next batch.
pub fn netshield_plus_on_matrix<F: Scalar>(
    a: ArrayView2<'_, F>,
    active: &[bool],
    m: usize,
    b: usize,
) -> Result<Vec<usize>> {
    check_mask(&a, active)?;
    if b == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let n = a.nrows();
    let mut work = a.to_owned();
    let mut act = active.to_vec();
    let mut picks: Vec<usize> = Vec::new();
    while picks.len() < m {
        let want = b.min(m - picks.len());
        let batch = netshield_on_matrix(work.view(), &act, want)?;
        if batch.is_empty() {
            break;
        }
        for &v in &batch {
            act[v] = false;
            for j in 0..n {
                work[(v, j)] = F::zero();
                work[(j, v)] = F::zero();
            }
            picks.push(v);
        }
    }
    Ok(picks)
}

/// Greedy eigenvalue-drop selection: each round recomputes the top
/// eigenvalue with every remaining candidate deleted in turn and removes the
/// candidate whose deletion drops it the most, ties to the lower id.
///
/// Two shortcuts keep the candidate sweep cheap without changing what it
/// returns. Zeroing entry `v` of the base unit eigenvector and renormalizing
/// gives a Rayleigh quotient of the deleted matrix, so each candidate's drop
/// is bounded above by quantities already in hand; candidates are solved in
/// descending bound order and the sweep stops once no remaining bound can
/// beat the best drop found. Each solve also starts from the base
/// eigenvector (with a uniform floor so a deposed component cannot trap the
/// iteration) instead of from scratch.
pub fn eigendrop_on_matrix<F: Scalar>(
    a: ArrayView2<'_, F>,
    active: &[bool],
    m: usize,
) -> Result<Vec<usize>> {
    check_mask(&a, active)?;
    let n = a.nrows();
    let one = F::one();
    let two = F::from_f64(2.0);
    let mut work = a.to_owned();
    let mut act = active.to_vec();
    let mut picks: Vec<usize> = Vec::new();
    let mut trial = work.clone();
    while picks.len() < m {
        let base = principal_eigenpair(work.view())?;
        if !base.converged {
            log::warn!(
                "power iteration stalled after {} iterations; selecting by degree instead",
                base.iterations
            );
            let rest = degree_order(work.view(), &act, m - picks.len());
            picks.extend(rest);
            break;
        }
        // The bound is evaluated from the computed pair itself (not the
        // ideal one), so it stays a true upper bound however well the pair
        // converged; only its tightness degrades.
        let au = work.dot(&base.u);
        let lambda_hat = base.u.dot(&au);
        let mut order: Vec<(usize, F)> = Vec::new();
        for v in 0..n {
            if !act[v] {
                continue;
            }
            let uv = base.u[v];
            let denom = one - uv * uv;
            let bound = if denom <= F::from_f64(1e-12) {
                lambda_hat.abs() + one
            } else {
                let quotient = (lambda_hat - two * uv * au[v] + uv * uv * work[(v, v)]) / denom;
                lambda_hat - quotient
            };
            order.push((v, bound));
        }
        order.sort_by(|x, y| {
            y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal).then(x.0.cmp(&y.0))
        });
        let margin = F::from_f64(1e-9) * (one + lambda_hat.abs());
        let uniform_floor = F::from_f64(1e-3 / (n as f64).sqrt());
        let mut best: Option<(usize, F)> = None;
        for &(v, bound) in &order {
            if let Some((_, best_drop)) = best {
                if bound < best_drop - margin {
                    break;
                }
            }
            trial.assign(&work);
            for j in 0..n {
                trial[(v, j)] = F::zero();
                trial[(j, v)] = F::zero();
            }
            let mut u0 = base.u.clone();
            u0[v] = F::zero();
            for i in 0..n {
                if i != v {
                    u0[i] = u0[i] + uniform_floor;
                }
            }
            // A stalled candidate solve still yields a usable Rayleigh
            // quotient.
            let after = principal_eigenpair_seeded(
                trial.view(),
                u0.view(),
                default_tol::<F>(),
                POWER_ITERATION_CAP,
            )?;
            let drop = base.lambda - after.lambda;
            let better = match best {
                None => true,
                Some((best_v, best_drop)) => {
                    drop > best_drop || (drop == best_drop && v < best_v)
                }
            };
            if better {
                best = Some((v, drop));
            }
        }
        match best {
            Some((v, _)) => {
                act[v] = false;
                for j in 0..n {
                    work[(v, j)] = F::zero();
                    work[(j, v)] = F::zero();
                }
                picks.push(v);
            }
            None => break,
        }
    }
    Ok(picks)
}

/// Non-removed nodes in descending observable-degree order, ties to the
/// lower id, truncated to `m`.
pub fn degree_select(net: &ContactNetwork, m: usize) -> Vec<usize> {
    let n = net.n();
    let mut order: Vec<usize> = (0..n).filter(|&k| !net.is_removed(k)).collect();
    order.sort_by_key(|&k| (std::cmp::Reverse(net.observable_degree(k)), k));
    order.truncate(m);
    order
}

pub fn netshield_select<F: Scalar>(net: &ContactNetwork, m: usize) -> Result<Vec<usize>> {
    let a: Array2<F> = net.active_observable_adjacency();
    let active: Vec<bool> = net.removed_mask().iter().map(|&r| !r).collect();
    netshield_on_matrix(a.view(), &active, m)
}

pub fn netshield_plus_select<F: Scalar>(
    net: &ContactNetwork,
    m: usize,
    b: usize,
) -> Result<Vec<usize>> {
    let a: Array2<F> = net.active_observable_adjacency();
    let active: Vec<bool> = net.removed_mask().iter().map(|&r| !r).collect();
    netshield_plus_on_matrix(a.view(), &active, m, b)
}

pub fn eigendrop_select<F: Scalar>(net: &ContactNetwork, m: usize) -> Result<Vec<usize>> {
    let a: Array2<F> = net.active_observable_adjacency();
    let active: Vec<bool> = net.removed_mask().iter().map(|&r| !r).collect();
    eigendrop_on_matrix(a.view(), &active, m)
}
