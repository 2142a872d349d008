//! Episode state shared by evaluation, training, and record replay.
//!
//! An [`EpisodeEnv`] owns the three coupled pieces of one episode: the
//! partially observable contact network, the ground-truth epidemic, and the
//! belief estimator. It enforces the step protocol those pieces agree on:
//! actions mutate the network first, then the epidemic advances one step,
//! then beliefs ingest that step's observations under the removal mask that
//! was in force while transmission happened.

use rand::Rng;

use crate::belief::{BeliefInputs, BeliefParams, BeliefState};
use crate::error::Error;
use crate::graph::{ContactNetwork, GraphGenConfig};
use crate::scalar::Scalar;
use crate::seir::{EpidemicParams, EpidemicState, StepReport};
use crate::Result;

/// One in-flight episode: ground truth plus the controller's evolving view.
#[derive(Debug, Clone)]
pub struct EpisodeEnv<F: Scalar> {
    pub net: ContactNetwork,
    pub sim: EpidemicState,
    pub beliefs: BeliefState<F>,
}

impl<F: Scalar> EpisodeEnv<F> {
    /// Builds a fresh episode. The graph comes from `graph` (its seed fixes
    /// the topology), the epidemic is seeded with `epidemic_seed`, and the
    /// belief estimator copies the epidemic's rates and incubation length.
    pub fn new(
        graph: GraphGenConfig,
        epidemic: EpidemicParams,
        zero_beliefs_on_recovery: bool,
        epidemic_seed: u64,
    ) -> Result<Self> {
        let net = ContactNetwork::generate_scale_free(graph)?;
        let sim = EpidemicState::init(&net, epidemic, epidemic_seed)?;
        let params = BeliefParams {
            beta: F::from_f64(epidemic.beta),
            gamma: F::from_f64(epidemic.gamma),
            t0: epidemic.t0,
            zero_on_recovery: zero_beliefs_on_recovery,
        };
        let beliefs = BeliefState::new(net.n(), params)?;
        Ok(EpisodeEnv { net, sim, beliefs })
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    /// Steps taken so far; also the current decision time.
    pub fn t(&self) -> usize {
        self.sim.t()
    }

    pub fn horizon(&self) -> usize {
        self.sim.params().horizon
    }

    pub fn done(&self) -> bool {
        self.sim.t() >= self.horizon()
    }

    /// Per-node flags for nodes currently infectious. Onsets are observable,
    /// so controllers may condition on this mask.
    pub fn infectious_mask(&self) -> Vec<bool> {
        let n = self.net.n();
        let mut mask = vec![false; n];
        for k in self.sim.infectious_nodes() {
            mask[k] = true;
        }
        mask
    }

    /// Removes each listed node from circulation before the next step.
    pub fn apply_removals(&mut self, nodes: &[usize]) -> Result<()> {
        for &k in nodes {
            self.net.remove_node(k)?;
        }
        Ok(())
    }

    /// Reveals the edges of up to `m1` uniformly chosen unexplored nodes.
    /// Used by scripted controllers that explore without a learned picker.
    /// Returns the picks and whether candidates ran out early.
    pub fn explore_randomly<R: Rng>(&mut self, m1: usize, rng: &mut R) -> Result<(Vec<usize>, bool)> {
        let mut picks = Vec::new();
        let mut shortage = false;
        for _ in 0..m1 {
            let cands: Vec<usize> = (0..self.net.n())
                .filter(|&k| !self.net.is_explored(k) && !self.net.is_removed(k))
                .collect();
            if cands.is_empty() {
                shortage = true;
                break;
            }
            let k = cands[rng.gen_range(0..cands.len())];
            self.net.explore_node_edges(k)?;
            picks.push(k);
        }
        Ok((picks, shortage))
    }

    /// Advances the epidemic one step and feeds the observations into the
    /// belief estimator. The removal mask is captured before the step because
    /// recoveries inside it reconnect nodes, while transmission during the
    /// step happened under the pre-step mask.
    pub fn step_epidemic(&mut self) -> Result<StepReport> {
        let removed: Vec<bool> = self.net.removed_mask().to_vec();
        let report = self.sim.step(&mut self.net)?;
        self.beliefs.revise_and_advance(BeliefInputs {
            new_onsets: &report.onsets,
            new_recoveries: &report.recovered,
            removed_during_step: &removed,
            net: &self.net,
        })?;
        Ok(report)
    }

    /// Fraction of nodes that have ever been exposed or infectious.
    pub fn abnormal_rate(&self) -> f64 {
        self.sim.abnormal_rate()
    }

    /// Count of nodes that have ever been exposed or infectious.
    pub fn ever_abnormal(&self) -> usize {
        (self.sim.abnormal_rate() * self.net.n() as f64).round() as usize
    }

    /// Checks that the three parts still describe the same population.
    pub fn check_consistent(&self) -> Result<()> {
        let n = self.net.n();
        if self.sim.healths().len() != n || self.beliefs.n() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} nodes in simulator and beliefs"),
                got: format!("{} and {}", self.sim.healths().len(), self.beliefs.n()),
            });
        }
        if self.sim.t() != self.beliefs.t() {
            return Err(Error::OutOfOrder { expected: self.sim.t(), got: self.beliefs.t() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_env() -> EpisodeEnv<f64> {
        EpisodeEnv::new(
            GraphGenConfig { n: 30, target_avg_degree: 4.0, seed: 7 },
            EpidemicParams { beta: 0.05, gamma: 0.02, t0: 3, horizon: 20, n_seeds: 2 },
            false,
            11,
        )
        .unwrap()
    }

    #[test]
    fn beliefs_track_simulator_clock() {
        let mut env = small_env();
        assert_eq!(env.t(), 0);
        env.check_consistent().unwrap();
        for _ in 0..5 {
            env.step_epidemic().unwrap();
            env.check_consistent().unwrap();
        }
        assert_eq!(env.t(), 5);
        assert_eq!(env.beliefs.t(), 5);
    }

    #[test]
    fn random_exploration_reveals_and_flags_shortage() {
        let mut env = small_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let before = env.net.known_edge_count();
        let (picks, shortage) = env.explore_randomly(5, &mut rng).unwrap();
        assert_eq!(picks.len(), 5);
        assert!(!shortage);
        assert!(env.net.known_edge_count() >= before);
        for &k in &picks {
            assert!(env.net.is_explored(k));
        }
        // Exhaust the rest; the next call must cut short and report it.
        let (rest, _) = env.explore_randomly(30, &mut rng).unwrap();
        assert_eq!(rest.len(), 25);
        let (none, shortage) = env.explore_randomly(1, &mut rng).unwrap();
        assert!(none.is_empty());
        assert!(shortage);
    }

    #[test]
    fn removal_mask_feeds_the_step_it_covers() {
        // Removing every node before the step must freeze the epidemic: no
        // transmission can happen under an all-removed mask.
        let mut env = small_env();
        let all: Vec<usize> = (0..env.n()).collect();
        let infectious_before = env.sim.infectious_nodes();
        env.apply_removals(&all).unwrap();
        let report = env.step_epidemic().unwrap();
        assert!(report.new_exposed.is_empty());
        // Exposed seeds still promote on their own clock.
        let _ = infectious_before;
    }

    #[test]
    fn abnormal_counts_match_rate() {
        let mut env = small_env();
        for _ in 0..20 {
            env.step_epidemic().unwrap();
        }
        let rate = env.abnormal_rate();
        let count = env.ever_abnormal();
        assert!((rate * 30.0 - count as f64).abs() < 1e-9);
    }
}
