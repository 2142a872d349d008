//! Per-node abnormal-probability estimation with retroactive revision.
//!
//! `p_i` estimates the probability that node `i` is exposed or infectious
//! given everything observed so far. One step of the recursion, with
//! `q_i = 0` once node `i` has shown onset and `1` before that:
//!
//! ```text
//! p_i' = (1 - p_i) q_i (1 - prod_j (1 - beta G_ij p_j)) + (1 - gamma (1 - q_i)) p_i
//! ```
//!
//! The estimator keeps a sliding window of the last `t0 + 1` probability
//! vectors. An onset at time `s` proves the node has been abnormal since
//! `s - t0`, so those window entries are pinned to exactly 1 and every later
//! transition in the window is replayed. Replay always uses the edges known
//! now, paired with the removal mask that was in force during each original
//! step, so late discoveries propagate backwards while quarantine history
//! stays faithful.
//!
//! With the inputs in `[0, 1]` the recursion stays in `[0, 1]`; a final
//! clamp only absorbs last-ulp rounding. Pinned values survive replay
//! exactly: a pinned `p = 1` with `q = 1` reproduces 1 with no rounding, and
//! after onset `q = 0` turns the recursion into plain `(1 - gamma)` decay.

use std::collections::VecDeque;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::graph::ContactNetwork;
use crate::scalar::{clamp01, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeliefParams<F> {
    /// Same contagion parameters the epidemic runs on.
    pub beta: F,
    pub gamma: F,
    /// Incubation length; also fixes the revision window at `t0 + 1` entries.
    pub t0: usize,
    /// Ablation: pin the probability of an observed recovery to 0 instead of
    /// letting it decay geometrically.
    pub zero_on_recovery: bool,
}

impl<F: Scalar> BeliefParams<F> {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: F| (F::zero()..=F::one()).contains(&x);
        if !ok(self.beta) {
            return Err(Error::Config(format!("belief beta must be in [0, 1], got {}", self.beta)));
        }
        if !ok(self.gamma) {
            return Err(Error::Config(format!(
                "belief gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.t0 == 0 {
            return Err(Error::Config("belief t0 must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything the estimator learns from one environment step.
pub struct BeliefInputs<'a> {
    /// Nodes that showed onset during the step, ascending.
    pub new_onsets: &'a [usize],
    /// Nodes observed to recover during the step, ascending.
    pub new_recoveries: &'a [usize],
    /// Removal mask in force while the step ran, one flag per node.
    pub removed_during_step: &'a [bool],
    /// The network as known after the step's explorations.
    pub net: &'a ContactNetwork,
}

#[derive(Debug, Clone)]
struct WindowEntry<F> {
    time: usize,
    p: Array1<F>,
    /// Removal mask for the transition into this entry; empty on the root.
    mask_into: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct BeliefState<F> {
    params: BeliefParams<F>,
    n: usize,
    t: usize,
    window: VecDeque<WindowEntry<F>>,
    onset_time: Vec<Option<usize>>,
    recovery_time: Vec<Option<usize>>,
}

/// One recursion step against a dense adjacency matrix. `q_one[i]` is true
/// while node `i` has never been observed infectious. Product terms run over
/// ascending `j`, the order every other code path uses.
pub fn one_step_update<F: Scalar>(
    prev: ArrayView1<'_, F>,
    g: ArrayView2<'_, F>,
    q_one: &[bool],
    beta: F,
    gamma: F,
) -> Result<Array1<F>> {
    let n = prev.len();
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} nodes"),
            got: format!("{}x{} adjacency", g.nrows(), g.ncols()),
        });
    }
    if q_one.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} nodes"),
            got: format!("q vector of length {}", q_one.len()),
        });
    }
    let mut next = Array1::zeros(n);
    for i in 0..n {
        let mut no_infection = F::one();
        for j in 0..n {
            if g[(i, j)] != F::zero() {
                no_infection = no_infection * (F::one() - beta * prev[j]);
            }
        }
        next[i] = recursion(prev[i], no_infection, q_one[i], gamma);
    }
    Ok(next)
}

fn recursion<F: Scalar>(p: F, no_infection: F, q_is_one: bool, gamma: F) -> F {
    let (q, one_minus_gq) = if q_is_one {
        (F::one(), F::one())
    } else {
        (F::zero(), F::one() - gamma)
    };
    clamp01((F::one() - p) * q * (F::one() - no_infection) + one_minus_gq * p)
}

impl<F: Scalar> BeliefState<F> {
    /// All probabilities start at zero at time 0.
    pub fn new(n: usize, params: BeliefParams<F>) -> Result<Self> {
        params.validate()?;
        let mut window = VecDeque::new();
        window.push_back(WindowEntry { time: 0, p: Array1::zeros(n), mask_into: Vec::new() });
        Ok(BeliefState {
            params,
            n,
            t: 0,
            window,
            onset_time: vec![None; n],
            recovery_time: vec![None; n],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn params(&self) -> &BeliefParams<F> {
        &self.params
    }

    /// The current estimate vector `p^t`.
    pub fn current_beliefs(&self) -> ArrayView1<'_, F> {
        self.window.back().expect("window never empty").p.view()
    }

    /// `q^t` as booleans: true while the node has never been observed
    /// infectious.
    pub fn current_q(&self) -> Vec<bool> {
        (0..self.n).map(|k| self.q_is_one(k, self.t)).collect()
    }

    /// Stored estimate for time `tau` if it is still inside the window.
    pub fn belief_at(&self, tau: usize) -> Option<ArrayView1<'_, F>> {
        self.window.iter().find(|e| e.time == tau).map(|e| e.p.view())
    }

    pub fn onset_time(&self, k: usize) -> Option<usize> {
        self.onset_time[k]
    }

    fn q_is_one(&self, k: usize, tau: usize) -> bool {
        match self.onset_time[k] {
            Some(s) => s > tau,
            None => true,
        }
    }

    /// Pin values the observations fix outright: 1 through the incubation
    /// span of each onset, and (under the ablation) 0 from observed recovery
    /// onward.
    fn apply_pins(&self, p: &mut Array1<F>, tau: usize, t0: usize) {
        for k in 0..self.n {
            if let Some(s) = self.onset_time[k] {
                if s.saturating_sub(t0) <= tau && tau <= s {
                    p[k] = F::one();
                }
            }
            if self.params.zero_on_recovery {
                if let Some(r) = self.recovery_time[k] {
                    if tau >= r {
                        p[k] = F::zero();
                    }
                }
            }
        }
    }

    /// One transition from the entry at `tau` to `tau + 1`, using edges known
    /// now and the removal mask recorded for that step.
    fn transition(&self, prev: &Array1<F>, tau: usize, mask: &[bool], net: &ContactNetwork) -> Array1<F> {
        let mut next = Array1::zeros(self.n);
        for i in 0..self.n {
            let mut no_infection = F::one();
            if !mask[i] {
                for j in net.known_neighbors(i) {
                    if !mask[j] {
                        no_infection = no_infection * (F::one() - self.params.beta * prev[j]);
                    }
                }
            }
            next[i] = recursion(prev[i], no_infection, self.q_is_one(i, tau), self.params.gamma);
        }
        next
    }

    /// Fold in one step's observations and advance to time `t + 1`: record
    /// onsets and recoveries, pin what they fix across the stored window,
    /// replay every stored transition under the currently known edges, then
    /// extend by one step under `removed_during_step`.
    pub fn revise_and_advance(&mut self, inputs: BeliefInputs<'_>) -> Result<()> {
        if inputs.net.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{} nodes", self.n),
                got: format!("network with {} nodes", inputs.net.n()),
            });
        }
        if inputs.removed_during_step.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{} nodes", self.n),
                got: format!("removal mask of length {}", inputs.removed_during_step.len()),
            });
        }
        let s = self.t + 1;
        for &k in inputs.new_onsets {
            if k >= self.n {
                return Err(Error::NodeOutOfRange { node: k, n: self.n });
            }
            if self.onset_time[k].is_some() {
                return Err(Error::Config(format!("repeated onset for node {k}")));
            }
            self.onset_time[k] = Some(s);
        }
        for &k in inputs.new_recoveries {
            if k >= self.n {
                return Err(Error::NodeOutOfRange { node: k, n: self.n });
            }
            self.recovery_time[k] = Some(s);
        }

        let t0 = self.params.t0;
        for idx in 0..self.window.len() {
            let tau = self.window[idx].time;
            if idx > 0 {
                let prev_tau = self.window[idx - 1].time;
                let mask = std::mem::take(&mut self.window[idx].mask_into);
                let replayed = self.transition(&self.window[idx - 1].p, prev_tau, &mask, inputs.net);
                let entry = &mut self.window[idx];
                entry.p = replayed;
                entry.mask_into = mask;
            }
            let mut p = std::mem::take(&mut self.window[idx].p);
            self.apply_pins(&mut p, tau, t0);
            self.window[idx].p = p;
        }

        let last = self.window.back().expect("window never empty");
        let mut p_new = self.transition(&last.p, last.time, inputs.removed_during_step, inputs.net);
        self.apply_pins(&mut p_new, s, t0);
        self.window.push_back(WindowEntry {
            time: s,
            p: p_new,
            mask_into: inputs.removed_during_step.to_vec(),
        });
        if self.window.len() > t0 + 1 {
            self.window.pop_front();
        }
        self.t = s;
        Ok(())
    }
}
