//! Discrete-time SEIR dynamics on the ground-truth graph.
//!
//! All transitions in a step are sampled from the start-of-step compartments,
//! so update order inside a step cannot change the distribution. Exposure
//! lasts exactly `t0` steps, infectious nodes recover with probability
//! `gamma` per step, and recovered nodes are permanently immune. A node is
//! abnormal while exposed or infectious.
//!
//! Observability contract: controllers may read onsets (the moment a node
//! turns infectious is always noticed) and recoveries, never the exposure
//! events themselves.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::ContactNetwork;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Health {
    Susceptible,
    Exposed,
    Infectious,
    Recovered,
}

impl Health {
    pub fn is_abnormal(self) -> bool {
        matches!(self, Health::Exposed | Health::Infectious)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpidemicParams {
    /// Infection probability per abnormal contact per step.
    pub beta: f64,
    /// Recovery probability per infectious node per step.
    pub gamma: f64,
    /// Incubation length in steps; onset happens exactly this long after
    /// exposure.
    pub t0: usize,
    /// Episode length in steps.
    pub horizon: usize,
    /// Number of initially exposed nodes.
    pub n_seeds: usize,
}

impl EpidemicParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if self.t0 == 0 {
            return Err(Error::Config("t0 must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.n_seeds == 0 || self.n_seeds >= n {
            return Err(Error::Config(format!(
                "n_seeds must be in [1, n), got {} with n = {}",
                self.n_seeds, n
            )));
        }
        Ok(())
    }
}

/// What one step reports back. `onsets` is the observable part; the exposure
/// fields exist for bookkeeping and tests and must not leak into decisions.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// Time index after the step.
    pub time: usize,
    /// Nodes that turned infectious during the step, ascending.
    pub onsets: Vec<usize>,
    /// Nodes that turned exposed during the step, ascending.
    pub new_exposed: Vec<usize>,
    /// Nodes that recovered during the step, ascending.
    pub recovered: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EpidemicState {
    params: EpidemicParams,
    health: Vec<Health>,
    /// Time the node entered E; usize::MAX while never exposed.
    exposed_at: Vec<usize>,
    ever_exposed: Vec<bool>,
    /// All (node, time-of-onset) pairs so far, in occurrence order.
    onset_log: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
    t: usize,
}

impl EpidemicState {
    /// Seed `n_seeds` uniformly sampled nodes as exposed at time 0.
    pub fn init(net: &ContactNetwork, params: EpidemicParams, seed: u64) -> Result<Self> {
        params.validate(net.n())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seeds: Vec<usize> =
            rand::seq::index::sample(&mut rng, net.n(), params.n_seeds).into_iter().collect();
        seeds.sort_unstable();
        Self::with_seed_nodes_and_rng(net, params, &seeds, rng)
    }

    /// Seed an explicit node set as exposed at time 0. For tests and replays.
    pub fn init_with_seeds(
        net: &ContactNetwork,
        params: EpidemicParams,
        seed_nodes: &[usize],
        seed: u64,
    ) -> Result<Self> {
        params.validate(net.n())?;
        if seed_nodes.len() != params.n_seeds {
            return Err(Error::Config(format!(
                "expected {} seed nodes, got {}",
                params.n_seeds,
                seed_nodes.len()
            )));
        }
        Self::with_seed_nodes_and_rng(net, params, seed_nodes, ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_seed_nodes_and_rng(
        net: &ContactNetwork,
        params: EpidemicParams,
        seed_nodes: &[usize],
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let n = net.n();
        let mut state = EpidemicState {
            params,
            health: vec![Health::Susceptible; n],
            exposed_at: vec![usize::MAX; n],
            ever_exposed: vec![false; n],
            onset_log: Vec::new(),
            rng,
            t: 0,
        };
        for (i, &k) in seed_nodes.iter().enumerate() {
            if k >= n {
                return Err(Error::NodeOutOfRange { node: k, n });
            }
            if i > 0 && seed_nodes[i - 1] >= k {
                return Err(Error::Config("seed nodes must be strictly ascending".into()));
            }
            state.health[k] = Health::Exposed;
            state.exposed_at[k] = 0;
            state.ever_exposed[k] = true;
        }
        Ok(state)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn params(&self) -> &EpidemicParams {
        &self.params
    }

    pub fn health(&self, k: usize) -> Health {
        self.health[k]
    }

    pub fn healths(&self) -> &[Health] {
        &self.health
    }

    /// Nodes currently infectious, ascending. Onset is always observed, so
    /// this set is known to the controller.
    pub fn infectious_nodes(&self) -> Vec<usize> {
        (0..self.health.len()).filter(|&k| self.health[k] == Health::Infectious).collect()
    }

    pub fn frac_infectious(&self) -> f64 {
        self.infectious_nodes().len() as f64 / self.health.len() as f64
    }

    pub fn onset_log(&self) -> &[(usize, usize)] {
        &self.onset_log
    }

    /// Fraction of nodes that were ever abnormal, seeds included.
    pub fn abnormal_rate(&self) -> f64 {
        let ever = self.ever_exposed.iter().filter(|&&e| e).count();
        ever as f64 / self.health.len() as f64
    }

    /// Advance one step. Takes `net` mutably because recovery lifts the
    /// quarantine of a removed node.
    ///
    /// Phase order (all phases read start-of-step compartments):
    /// onset for exposed nodes whose incubation elapses this step, then
    /// infection of active susceptible nodes by active abnormal true
    /// neighbors with probability `1 - (1 - beta)^a` for `a` such contacts
    /// (one uniform draw per eligible node, ascending id), then recovery
    /// draws for nodes infectious at step start (ascending id).
    pub fn step(&mut self, net: &mut ContactNetwork) -> Result<StepReport> {
        if self.t >= self.params.horizon {
            return Err(Error::HorizonExceeded { t: self.t, horizon: self.params.horizon });
        }
        let n = self.health.len();
        if n != net.n() {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} nodes"),
                got: format!("network with {} nodes", net.n()),
            });
        }
        let new_t = self.t + 1;
        let start: Vec<Health> = self.health.clone();

        let mut onsets = Vec::new();
        for k in 0..n {
            if start[k] == Health::Exposed && self.exposed_at[k] + self.params.t0 == new_t {
                self.health[k] = Health::Infectious;
                self.onset_log.push((k, new_t));
                onsets.push(k);
            }
        }

        let mut new_exposed = Vec::new();
        for i in 0..n {
            if start[i] != Health::Susceptible || net.is_removed(i) {
                continue;
            }
            let contacts = net
                .true_neighbors(i)
                .filter(|&j| !net.is_removed(j) && start[j].is_abnormal())
                .count();
            if contacts == 0 {
                continue;
            }
            let p_infect = 1.0 - (1.0 - self.params.beta).powi(contacts as i32);
            if self.rng.gen::<f64>() < p_infect {
                self.health[i] = Health::Exposed;
                self.exposed_at[i] = new_t;
                self.ever_exposed[i] = true;
                new_exposed.push(i);
            }
        }

        let mut recovered = Vec::new();
        for k in 0..n {
            if start[k] == Health::Infectious && self.rng.gen::<f64>() < self.params.gamma {
                self.health[k] = Health::Recovered;
                recovered.push(k);
                if net.is_removed(k) {
                    net.restore_node(k)?;
                }
            }
        }

        self.t = new_t;
        Ok(StepReport { time: new_t, onsets, new_exposed, recovered })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphGenConfig;

    fn params(beta: f64, gamma: f64, t0: usize, horizon: usize, n_seeds: usize) -> EpidemicParams {
        EpidemicParams { beta, gamma, t0, horizon, n_seeds }
    }

    fn path(n: usize) -> ContactNetwork {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        ContactNetwork::from_edges(n, &edges, 0).unwrap()
    }

    #[test]
    fn validation_rejects_bad_params() {
        let net = path(5);
        for bad in [
            params(-0.1, 0.1, 2, 10, 1),
            params(1.1, 0.1, 2, 10, 1),
            params(0.1, -0.1, 2, 10, 1),
            params(0.1, 0.1, 0, 10, 1),
            params(0.1, 0.1, 2, 0, 1),
            params(0.1, 0.1, 2, 10, 0),
            params(0.1, 0.1, 2, 10, 5),
        ] {
            assert!(EpidemicState::init(&net, bad, 0).is_err());
        }
    }

    #[test]
    fn zero_beta_never_spreads() {
        let mut net = path(10);
        let p = params(0.0, 0.1, 2, 40, 1);
        let mut sim = EpidemicState::init_with_seeds(&net, p, &[4], 7).unwrap();
        for _ in 0..40 {
            let rep = sim.step(&mut net).unwrap();
            assert!(rep.new_exposed.is_empty());
        }
        assert_eq!(sim.abnormal_rate(), 0.1);
    }

    #[test]
    fn zero_gamma_full_beta_cascades_over_path() {
        // Deterministic wave: the seed infects its neighbors every step.
        let mut net = path(6);
        let p = params(1.0, 0.0, 1, 20, 1);
        let mut sim = EpidemicState::init_with_seeds(&net, p, &[0], 3).unwrap();
        for _ in 0..20 {
            sim.step(&mut net).unwrap();
        }
        assert_eq!(sim.abnormal_rate(), 1.0);
        assert!(sim.healths().iter().all(|&h| h == Health::Infectious));
    }

    #[test]
    fn onset_happens_exactly_t0_after_exposure() {
        let cfg = GraphGenConfig { n: 40, target_avg_degree: 4.0, seed: 2 };
        for seed in 0..10 {
            let mut net = ContactNetwork::generate_scale_free(cfg).unwrap();
            let p = params(0.3, 0.1, 4, 30, 2);
            let mut sim = EpidemicState::init(&net, p, seed).unwrap();
            let mut exposed_at = vec![None::<usize>; 40];
            for (k, &h) in sim.healths().iter().enumerate() {
                if h == Health::Exposed {
                    exposed_at[k] = Some(0);
                }
            }
            for _ in 0..30 {
                let rep = sim.step(&mut net).unwrap();
                for &k in &rep.new_exposed {
                    exposed_at[k] = Some(rep.time);
                }
                for &k in &rep.onsets {
                    assert_eq!(rep.time, exposed_at[k].unwrap() + 4, "node {k}");
                }
            }
        }
    }

    #[test]
    fn single_edge_transmission_frequency_matches_beta() {
        // 100k independent one-step trials across a single S-E edge with
        // beta = 0.5; exposure frequency must sit within half a percent.
        let base = ContactNetwork::from_edges(2, &[(0, 1)], 0).unwrap();
        let p = params(0.5, 0.0, 3, 1, 1);
        let trials = 100_000;
        let mut hits = 0;
        for seed in 0..trials {
            let mut net = base.clone();
            let mut sim = EpidemicState::init_with_seeds(&net, p, &[0], seed).unwrap();
            let rep = sim.step(&mut net).unwrap();
            if rep.new_exposed == [1] {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        assert!((0.495..=0.505).contains(&freq), "empirical frequency {freq}");
    }

    #[test]
    fn two_abnormal_contacts_compound() {
        // P(exposure) = 1 - (1 - beta)^2 = 0.64 for beta = 0.4.
        let base = ContactNetwork::from_edges(3, &[(0, 2), (1, 2)], 0).unwrap();
        let p = params(0.4, 0.0, 3, 1, 2);
        let trials = 100_000;
        let mut hits = 0;
        for seed in 0..trials {
            let mut net = base.clone();
            let mut sim = EpidemicState::init_with_seeds(&net, p, &[0, 1], seed).unwrap();
            let rep = sim.step(&mut net).unwrap();
            if rep.new_exposed == [2] {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        assert!((0.635..=0.645).contains(&freq), "empirical frequency {freq}");
    }

    #[test]
    fn transitions_follow_seir_order_and_conserve_nodes() {
        let cfg = GraphGenConfig { n: 50, target_avg_degree: 4.0, seed: 8 };
        for seed in 0..20 {
            let mut net = ContactNetwork::generate_scale_free(cfg).unwrap();
            let p = params(0.2, 0.15, 3, 40, 2);
            let mut sim = EpidemicState::init(&net, p, seed).unwrap();
            let mut prev = sim.healths().to_vec();
            for _ in 0..40 {
                sim.step(&mut net).unwrap();
                let cur = sim.healths().to_vec();
                assert_eq!(cur.len(), 50);
                for (a, b) in prev.iter().zip(&cur) {
                    let legal = match (a, b) {
                        (x, y) if x == y => true,
                        (Health::Susceptible, Health::Exposed) => true,
                        (Health::Exposed, Health::Infectious) => true,
                        (Health::Infectious, Health::Recovered) => true,
                        _ => false,
                    };
                    assert!(legal, "illegal transition {a:?} -> {b:?}");
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn removed_hub_does_not_transmit() {
        let edges: Vec<(usize, usize)> = (1..=6).map(|v| (0, v)).collect();
        let p = params(1.0, 0.0, 1, 30, 1);
        for seed in 0..20 {
            let mut net = ContactNetwork::from_edges(7, &edges, 0).unwrap();
            net.remove_node(0).unwrap();
            let mut sim = EpidemicState::init_with_seeds(&net, p, &[0], seed).unwrap();
            for _ in 0..30 {
                let rep = sim.step(&mut net).unwrap();
                assert!(rep.new_exposed.is_empty());
            }
            assert_eq!(sim.abnormal_rate(), 1.0 / 7.0);
        }
    }

    #[test]
    fn removed_susceptible_cannot_be_exposed() {
        let p = params(1.0, 0.0, 1, 30, 1);
        let mut net = path(3);
        net.remove_node(2).unwrap();
        let mut sim = EpidemicState::init_with_seeds(&net, p, &[0], 5).unwrap();
        for _ in 0..30 {
            sim.step(&mut net).unwrap();
        }
        assert_eq!(sim.health(1), Health::Infectious);
        assert_eq!(sim.health(2), Health::Susceptible);
    }

    #[test]
    fn recovery_lifts_quarantine() {
        let p = params(0.0, 1.0, 1, 5, 1);
        let mut net = path(3);
        let mut sim = EpidemicState::init_with_seeds(&net, p, &[1], 5).unwrap();
        net.remove_node(1).unwrap();
        sim.step(&mut net).unwrap();
        assert!(net.is_removed(1));
        let rep = sim.step(&mut net).unwrap();
        assert_eq!(rep.recovered, [1]);
        assert!(!net.is_removed(1));
        assert_eq!(sim.health(1), Health::Recovered);
    }

    #[test]
    fn newly_promoted_node_recovers_no_earlier_than_next_step() {
        // gamma = 1 forces recovery on the first step the node begins as
        // infectious, never on the onset step itself.
        let p = params(0.0, 1.0, 2, 5, 1);
        let mut net = path(3);
        let mut sim = EpidemicState::init_with_seeds(&net, p, &[0], 1).unwrap();
        sim.step(&mut net).unwrap();
        assert_eq!(sim.health(0), Health::Exposed);
        let rep = sim.step(&mut net).unwrap();
        assert_eq!(rep.onsets, [0]);
        assert_eq!(sim.health(0), Health::Infectious);
        let rep = sim.step(&mut net).unwrap();
        assert_eq!(rep.recovered, [0]);
    }

    #[test]
    fn higher_beta_spreads_more_on_average() {
        let cfg = GraphGenConfig { n: 60, target_avg_degree: 4.0, seed: 13 };
        let mut low = 0.0;
        let mut high = 0.0;
        for seed in 0..200 {
            for (beta, acc) in [(0.05, &mut low), (0.3, &mut high)] {
                let mut net = ContactNetwork::generate_scale_free(cfg).unwrap();
                let p = params(beta, 0.05, 3, 30, 2);
                let mut sim = EpidemicState::init(&net, p, seed).unwrap();
                for _ in 0..30 {
                    sim.step(&mut net).unwrap();
                }
                *acc += sim.abnormal_rate();
            }
        }
        assert!(
            high > low * 1.5,
            "mean abnormal rate low-beta {low} vs high-beta {high}"
        );
    }

    #[test]
    fn stepping_past_horizon_is_an_error() {
        let mut net = path(4);
        let p = params(0.1, 0.1, 2, 2, 1);
        let mut sim = EpidemicState::init(&net, p, 0).unwrap();
        sim.step(&mut net).unwrap();
        sim.step(&mut net).unwrap();
        assert!(matches!(sim.step(&mut net), Err(Error::HorizonExceeded { .. })));
    }

    #[test]
    fn runs_are_reproducible_for_a_fixed_seed() {
        let cfg = GraphGenConfig { n: 50, target_avg_degree: 4.0, seed: 21 };
        let run = || {
            let mut net = ContactNetwork::generate_scale_free(cfg).unwrap();
            let p = params(0.25, 0.1, 3, 25, 2);
            let mut sim = EpidemicState::init(&net, p, 77).unwrap();
            let mut log = Vec::new();
            for _ in 0..25 {
                let rep = sim.step(&mut net).unwrap();
                log.push((rep.onsets, rep.new_exposed, rep.recovered));
            }
            log
        };
        assert_eq!(run(), run());
    }
}
