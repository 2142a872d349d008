//! Hierarchical control agents. A policy-selection DQN scores the two
//! high-level actions (explore hidden structure, remove suspect nodes) from a
//! GCN embedding of the observable graph, and an explore DQN ranks individual
//! nodes for structure discovery. Node removal itself is analytic, see
//! [`removal`].

pub mod removal;

pub use removal::{expected_new_exposures, removal_scores, select_remove_nodes, RemovalSelection};

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::ContactNetwork;
use crate::neural::{
    global_max_pool, load_checkpoint, max_pool_backward, save_checkpoint, AdamConfig,
    CheckpointManifest, LayerSpec, NormalizedAdjacency, ReplayBuffer, ValueNet,
};
use crate::scalar::Scalar;
use crate::seeds;
use crate::{Error, Result};

/// Per-node feature rows fed to the GCN: abnormal probability, explored flag,
/// removed flag, observable degree (count of known, non-removed neighbors;
/// zero for a removed node).
pub fn node_features<F: Scalar>(
    net: &ContactNetwork,
    beliefs: ArrayView1<'_, F>,
) -> Result<Array2<F>> {
    let n = net.n();
    if beliefs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} beliefs"),
            got: format!("{}", beliefs.len()),
        });
    }
    let mut x = Array2::zeros((n, 4));
    for k in 0..n {
        x[(k, 0)] = beliefs[k];
        x[(k, 1)] = if net.is_explored(k) { F::one() } else { F::zero() };
        x[(k, 2)] = if net.is_removed(k) { F::one() } else { F::zero() };
        x[(k, 3)] = F::from_f64(net.observable_degree(k) as f64);
    }
    Ok(x)
}

/// Global state pair for the explore agent: fraction of nodes explored so
/// far, fraction of nodes currently infectious.
pub fn explore_state<F: Scalar>(net: &ContactNetwork, infectious: &[bool]) -> [F; 2] {
    let n = net.n() as f64;
    let explored = net.explored_count() as f64 / n;
    let sick = infectious.iter().filter(|&&b| b).count() as f64 / n;
    [F::from_f64(explored), F::from_f64(sick)]
}

/// Per-candidate action features for the explore agent: abnormal probability,
/// explored flag, observable degree. `k` must be in range.
pub fn explore_action_features<F: Scalar>(
    net: &ContactNetwork,
    beliefs: ArrayView1<'_, F>,
    k: usize,
) -> [F; 3] {
    [
        beliefs[k],
        if net.is_explored(k) { F::one() } else { F::zero() },
        F::from_f64(net.observable_degree(k) as f64),
    ]
}

/// High-level action chosen by the policy agent each control step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Explore,
    Remove,
}

impl PolicyChoice {
    /// Scalar action flag appended to the pooled graph embedding.
    pub fn flag<F: Scalar>(self) -> F {
        match self {
            PolicyChoice::Explore => F::zero(),
            PolicyChoice::Remove => F::one(),
        }
    }
}

/// Linear epsilon anneal over the first `anneal_frac` of training progress,
/// flat at `end` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_frac: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.05, anneal_frac: 0.6 }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("start", self.start), ("end", self.end), ("anneal_frac", self.anneal_frac)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("epsilon {name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// `progress` is the completed fraction of the training budget.
    pub fn at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        if self.anneal_frac <= 0.0 || p >= self.anneal_frac {
            self.end
        } else {
            self.start + (self.end - self.start) * (p / self.anneal_frac)
        }
    }
}

/// Per-step policy rewards for one finished episode. `rewards[t]` counts the
/// negated symptom onsets that resolve step `t`'s exposures; entries from
/// `truncated_from` on fall past the horizon and are scored zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardStream {
    pub rewards: Vec<f64>,
    pub truncated_from: usize,
}

/// Maps an onset log (node, onset time) to the policy reward stream. Onsets
/// at exactly the incubation delay belong to the initial seeds, not to any
/// decision step, so step zero always scores zero.
pub fn policy_reward_stream(onset_log: &[(usize, usize)], t0: usize, horizon: usize) -> RewardStream {
    let mut rewards = vec![0.0; horizon];
    for &(_, s) in onset_log {
        if s <= t0 {
            continue;
        }
        let t = s - t0;
        if t < horizon {
            rewards[t] -= 1.0;
        }
    }
    let truncated_from = (horizon + 1).saturating_sub(t0).min(horizon);
    RewardStream { rewards, truncated_from }
}

/// Frozen observable view used in replayed transitions: node features plus
/// the known, active edge list at capture time.
#[derive(Debug, Clone)]
pub struct GraphSnapshot<F> {
    pub features: Array2<F>,
    pub edges: Vec<(u32, u32)>,
}

impl<F: Scalar> GraphSnapshot<F> {
    pub fn capture(net: &ContactNetwork, beliefs: ArrayView1<'_, F>) -> Result<Self> {
        let features = node_features(net, beliefs)?;
        let edges = net
            .active_known_edges()
            .into_iter()
            .map(|(u, v)| (u as u32, v as u32))
            .collect();
        Ok(GraphSnapshot { features, edges })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    fn normalized_adjacency(&self) -> Result<NormalizedAdjacency<F>> {
        let n = self.n();
        let mut g = Array2::zeros((n, n));
        for &(u, v) in &self.edges {
            g[(u as usize, v as usize)] = F::one();
            g[(v as usize, u as usize)] = F::one();
        }
        NormalizedAdjacency::new(g.view())
    }
}

/// One replayed decision of the policy agent. `ret` is the n-step discounted
/// reward sum; `next` carries the bootstrap state and its discount weight and
/// is absent when the window ran into the end of the episode.
#[derive(Debug, Clone)]
pub struct PolicyTransition<F> {
    pub state: GraphSnapshot<F>,
    pub action: PolicyChoice,
    pub ret: F,
    pub next: Option<(GraphSnapshot<F>, F)>,
    /// Part of the reward window fell past the horizon and was scored zero.
    pub truncated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig<F: Scalar> {
    /// Embedding stack applied with graph propagation; input width 4.
    pub gcn: Vec<LayerSpec>,
    /// Q head over the pooled embedding plus the action flag.
    pub head: Vec<LayerSpec>,
    pub adam: AdamConfig<F>,
    pub discount: F,
    pub n_step: usize,
    pub sync_every: u64,
    pub replay_capacity: usize,
    pub minibatch: usize,
    pub epsilon: EpsilonSchedule,
}

impl<F: Scalar> Default for PolicyConfig<F> {
    fn default() -> Self {
        PolicyConfig {
            gcn: vec![
                LayerSpec::relu(4, 100, false),
                LayerSpec::relu(100, 100, false),
                LayerSpec::relu(100, 20, false),
            ],
            head: vec![
                LayerSpec::relu(21, 80, true),
                LayerSpec::relu(80, 60, true),
                LayerSpec::linear(60, 1, true),
            ],
            adam: AdamConfig::default(),
            discount: F::from_f64(0.99),
            n_step: 3,
            sync_every: 200,
            replay_capacity: 50_000,
            minibatch: 32,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl<F: Scalar> PolicyConfig<F> {
    pub fn validate(&self) -> Result<()> {
        let gcn_in = self.gcn.first().map(|l| l.in_dim).unwrap_or(0);
        if gcn_in != 4 {
            return Err(Error::Config(format!(
                "policy embedding must take 4 node features, got {gcn_in}"
            )));
        }
        let gcn_out = self.gcn.last().map(|l| l.out_dim).unwrap_or(0);
        let head_in = self.head.first().map(|l| l.in_dim).unwrap_or(0);
        if head_in != gcn_out + 1 {
            return Err(Error::Config(format!(
                "policy head input {head_in} must equal embedding width {gcn_out} plus the action flag"
            )));
        }
        if self.head.last().map(|l| l.out_dim) != Some(1) {
            return Err(Error::Config("policy head must end in a single output".into()));
        }
        let d = self.discount.into_f64();
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1], got {d}")));
        }
        if self.n_step == 0 {
            return Err(Error::Config("n_step must be at least 1".into()));
        }
        if self.sync_every == 0 {
            return Err(Error::Config("sync_every must be at least 1".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        if self.replay_capacity < self.minibatch {
            return Err(Error::Config(format!(
                "replay capacity {} is smaller than the minibatch {}",
                self.replay_capacity, self.minibatch
            )));
        }
        self.epsilon.validate()
    }
}

/// DQN over the two high-level actions. Online and target copies of both the
/// embedding stack and the Q head train from an n-step replay buffer.
#[derive(Debug)]
pub struct PolicyAgent<F: Scalar> {
    cfg: PolicyConfig<F>,
    seed: u64,
    pub gcn: ValueNet<F>,
    pub qnet: ValueNet<F>,
    gcn_target: ValueNet<F>,
    qnet_target: ValueNet<F>,
    replay: ReplayBuffer<PolicyTransition<F>>,
    learner_steps: u64,
    episodes: u64,
}

impl<F: Scalar> PolicyAgent<F> {
    pub fn new(cfg: PolicyConfig<F>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let gcn = ValueNet::new(&cfg.gcn, seeds::derive(seed, "policy-gcn", 0))?;
        let qnet = ValueNet::new(&cfg.head, seeds::derive(seed, "policy-head", 0))?;
        let gcn_target = gcn.clone();
        let qnet_target = qnet.clone();
        let replay = ReplayBuffer::new(cfg.replay_capacity, seeds::derive(seed, "policy-replay", 0))?;
        Ok(PolicyAgent {
            cfg,
            seed,
            gcn,
            qnet,
            gcn_target,
            qnet_target,
            replay,
            learner_steps: 0,
            episodes: 0,
        })
    }

    pub fn cfg(&self) -> &PolicyConfig<F> {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    fn q_pair(gcn: &ValueNet<F>, qnet: &ValueNet<F>, snap: &GraphSnapshot<F>) -> Result<(F, F)> {
        let a = snap.normalized_adjacency()?;
        let emb = gcn.forward_prop(&a, snap.features.view())?;
        let (pooled, _) = global_max_pool(emb.view())?;
        let d = pooled.len();
        let mut x = Array1::zeros(d + 1);
        x.slice_mut(s![..d]).assign(&pooled);
        let q_explore = qnet.value(x.view())?;
        x[d] = F::one();
        let q_remove = qnet.value(x.view())?;
        Ok((q_explore, q_remove))
    }

    /// Online Q values for (explore, remove).
    pub fn q_values(&self, snap: &GraphSnapshot<F>) -> Result<(F, F)> {
        Self::q_pair(&self.gcn, &self.qnet, snap)
    }

    /// Epsilon-greedy action choice. Exact ties prefer Explore.
    pub fn select<R: Rng>(
        &self,
        snap: &GraphSnapshot<F>,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<PolicyChoice> {
        if rng.gen::<f64>() < epsilon {
            return Ok(if rng.gen_bool(0.5) { PolicyChoice::Explore } else { PolicyChoice::Remove });
        }
        self.greedy_choice(snap)
    }

    pub fn greedy_choice(&self, snap: &GraphSnapshot<F>) -> Result<PolicyChoice> {
        let (q_explore, q_remove) = self.q_values(snap)?;
        Ok(if q_remove > q_explore { PolicyChoice::Remove } else { PolicyChoice::Explore })
    }

    /// Resolves one finished episode into n-step transitions and pushes them
    /// into replay. `steps` holds the state seen and action taken at each
    /// control step, index-aligned with `stream.rewards`.
    pub fn push_episode(
        &mut self,
        steps: &[(GraphSnapshot<F>, PolicyChoice)],
        stream: &RewardStream,
    ) -> Result<()> {
        if steps.len() != stream.rewards.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rewards", steps.len()),
                got: format!("{}", stream.rewards.len()),
            });
        }
        let t_len = steps.len();
        let n = self.cfg.n_step;
        for t in 0..t_len {
            let span = n.min(t_len - t);
            let mut ret = F::zero();
            let mut w = F::one();
            for k in 0..span {
                ret = ret + w * F::from_f64(stream.rewards[t + k]);
                w = w * self.cfg.discount;
            }
            let next = if t + n < t_len { Some((steps[t + n].0.clone(), w)) } else { None };
            let truncated = t + span > stream.truncated_from;
            self.replay.push(PolicyTransition {
                state: steps[t].0.clone(),
                action: steps[t].1,
                ret,
                next,
                truncated,
            });
        }
        self.episodes += 1;
        Ok(())
    }

    fn divergence(episode: u64, e: Error) -> Error {
        match e {
            Error::NonFiniteGradient => Error::Diverged {
                episode: episode as usize,
                reason: "non-finite gradient in policy update".into(),
            },
            other => other,
        }
    }

    /// One TD(n) minibatch update. Returns the loss, or `None` while replay
    /// holds fewer transitions than one minibatch. A non-finite loss or
    /// gradient aborts with `Error::Diverged` and leaves parameters intact.
    pub fn learn_minibatch(&mut self) -> Result<Option<F>> {
        let b = self.cfg.minibatch;
        if self.replay.len() < b {
            return Ok(None);
        }
        let idxs = self.replay.sample_indices(b)?;
        let emb_dim = self.cfg.head[0].in_dim - 1;
        let mut xs = Array2::zeros((b, emb_dim + 1));
        let mut ys = Array1::zeros(b);
        let mut caches = Vec::with_capacity(b);
        let mut argmaxes = Vec::with_capacity(b);
        let mut rows_n = Vec::with_capacity(b);
        for (row, &i) in idxs.iter().enumerate() {
            let tr = self.replay.get(i);
            let mut y = tr.ret;
            if let Some((next, w)) = &tr.next {
                let (qe, qr) = Self::q_pair(&self.gcn_target, &self.qnet_target, next)?;
                y = y + *w * if qe >= qr { qe } else { qr };
            }
            ys[row] = y;
            let a = tr.state.normalized_adjacency()?;
            let (emb, cache) = self.gcn.forward_prop_cached(&a, tr.state.features.view())?;
            let (pooled, argmax) = global_max_pool(emb.view())?;
            xs.slice_mut(s![row, ..emb_dim]).assign(&pooled);
            xs[(row, emb_dim)] = tr.action.flag();
            caches.push(cache);
            argmaxes.push(argmax);
            rows_n.push(tr.state.n());
        }
        let (q, head_cache) = self.qnet.forward_cached(xs.view())?;
        let mut d = Array2::zeros((b, 1));
        let mut loss = F::zero();
        let inv_b = F::from_f64(1.0 / b as f64);
        let two = F::from_f64(2.0);
        for row in 0..b {
            let err = q[(row, 0)] - ys[row];
            loss = loss + err * err * inv_b;
            d[(row, 0)] = two * err * inv_b;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                episode: self.episodes as usize,
                reason: "policy TD loss is not finite".into(),
            });
        }
        self.qnet.zero_grads();
        self.gcn.zero_grads();
        let dx = self.qnet.backward(&head_cache, d.view())?;
        for row in 0..b {
            let d_emb = max_pool_backward(dx.slice(s![row, ..emb_dim]), &argmaxes[row], rows_n[row]);
            self.gcn.backward(&caches[row], d_emb.view())?;
        }
        let ep = self.episodes;
        self.qnet.adam_step(&self.cfg.adam).map_err(|e| Self::divergence(ep, e))?;
        self.gcn.adam_step(&self.cfg.adam).map_err(|e| Self::divergence(ep, e))?;
        self.learner_steps += 1;
        if self.learner_steps % self.cfg.sync_every == 0 {
            self.sync_targets()?;
        }
        Ok(Some(loss))
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        self.gcn_target.sync_from(&self.gcn)?;
        self.qnet_target.sync_from(&self.qnet)
    }

    pub fn save(&self, path: &Path) -> Result<()>
    where
        F: Serialize,
    {
        let manifest = CheckpointManifest {
            kind: "policy".into(),
            seed: self.seed,
            learner_steps: self.learner_steps,
            episodes: self.episodes,
            hyper: serde_json::to_value(&self.cfg)
                .map_err(|e| Error::Checkpoint(format!("hyperparameter encode: {e}")))?,
            nets: Vec::new(),
            blob_len_bytes: 0,
        };
        save_checkpoint(
            path,
            manifest,
            &[
                ("gcn", &self.gcn),
                ("qnet", &self.qnet),
                ("gcn_target", &self.gcn_target),
                ("qnet_target", &self.qnet_target),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        F: serde::de::DeserializeOwned,
    {
        let (manifest, params) = load_checkpoint(path)?;
        if manifest.kind != "policy" {
            return Err(Error::Checkpoint(format!(
                "expected a policy checkpoint, found kind {:?}",
                manifest.kind
            )));
        }
        let names = ["gcn", "qnet", "gcn_target", "qnet_target"];
        if manifest.nets.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "policy checkpoint must hold {} nets, found {}",
                names.len(),
                manifest.nets.len()
            )));
        }
        for (m, want) in manifest.nets.iter().zip(names) {
            if m.name != want {
                return Err(Error::Checkpoint(format!(
                    "unexpected net {:?} where {want:?} belongs",
                    m.name
                )));
            }
        }
        let cfg: PolicyConfig<F> = serde_json::from_value(manifest.hyper.clone())
            .map_err(|e| Error::Checkpoint(format!("hyperparameter decode: {e}")))?;
        cfg.validate()
            .map_err(|e| Error::Checkpoint(format!("checkpoint hyperparameters invalid: {e}")))?;
        let mut agent = Self::new(cfg, manifest.seed)?;
        let wrap = |e: Error| Error::Checkpoint(format!("parameter load: {e}"));
        agent.gcn.load_flat(&params[0]).map_err(wrap)?;
        agent.qnet.load_flat(&params[1]).map_err(wrap)?;
        agent.gcn_target.load_flat(&params[2]).map_err(wrap)?;
        agent.qnet_target.load_flat(&params[3]).map_err(wrap)?;
        agent.learner_steps = manifest.learner_steps;
        agent.episodes = manifest.episodes;
        Ok(agent)
    }
}

/// One node chosen during an exploration step, with the Q input that chose it
/// and the edges its reveal added to the observable graph.
#[derive(Debug, Clone)]
pub struct ExplorePick<F> {
    pub node: usize,
    pub input: Array1<F>,
    pub new_edges: Vec<(usize, usize)>,
}

/// Result of one exploration step. `candidates[i]` holds the Q input rows
/// (ascending node id) that pick `i` chose from; reveals apply immediately,
/// so later rows reflect earlier picks.
#[derive(Debug, Clone)]
pub struct ExploreOutcome<F> {
    pub picks: Vec<ExplorePick<F>>,
    pub candidates: Vec<Array2<F>>,
    /// Fewer unexplored nodes remained than the budget asked for.
    pub shortage: bool,
}

/// One replayed pick of the explore agent. Picks within a step chain into a
/// mini-episode: `next_inputs` holds the following pick's candidate rows and
/// is empty on the step's last pick.
#[derive(Debug, Clone)]
pub struct ExploreTransition<F> {
    pub input: Array1<F>,
    pub reward: F,
    pub next_inputs: Array2<F>,
    pub done: bool,
}

/// Exploration reward: newly revealed edges touching a currently infectious
/// node weigh `rho`, all other new edges weigh one.
pub fn explore_reward<F: Scalar>(new_edges: &[(usize, usize)], infectious: &[bool], rho: F) -> F {
    let mut hot = 0usize;
    let mut cold = 0usize;
    for &(u, v) in new_edges {
        if infectious[u] || infectious[v] {
            hot += 1;
        } else {
            cold += 1;
        }
    }
    rho * F::from_f64(hot as f64) + F::from_f64(cold as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig<F: Scalar> {
    /// Q head over [global state; candidate action features]; input width 5.
    pub head: Vec<LayerSpec>,
    pub adam: AdamConfig<F>,
    pub discount: F,
    /// Reward weight on new edges that touch an infectious node.
    pub rho: F,
    pub sync_every: u64,
    pub replay_capacity: usize,
    pub minibatch: usize,
    pub epsilon: EpsilonSchedule,
}

impl<F: Scalar> Default for ExploreConfig<F> {
    fn default() -> Self {
        ExploreConfig {
            head: vec![LayerSpec::relu(5, 80, true), LayerSpec::linear(80, 1, true)],
            adam: AdamConfig::default(),
            discount: F::from_f64(0.99),
            rho: F::from_f64(2.0),
            sync_every: 200,
            replay_capacity: 50_000,
            minibatch: 32,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl<F: Scalar> ExploreConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.head.first().map(|l| l.in_dim) != Some(5) {
            return Err(Error::Config(
                "explore head must take 2 state and 3 action features".into(),
            ));
        }
        if self.head.last().map(|l| l.out_dim) != Some(1) {
            return Err(Error::Config("explore head must end in a single output".into()));
        }
        let d = self.discount.into_f64();
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1], got {d}")));
        }
        let rho = self.rho.into_f64();
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::Config(format!("rho must be finite and non-negative, got {rho}")));
        }
        if self.sync_every == 0 {
            return Err(Error::Config("sync_every must be at least 1".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        if self.replay_capacity < self.minibatch {
            return Err(Error::Config(format!(
                "replay capacity {} is smaller than the minibatch {}",
                self.replay_capacity, self.minibatch
            )));
        }
        self.epsilon.validate()
    }
}

/// DQN that ranks unexplored nodes one pick at a time within an exploration
/// step, revealing edges between picks so later choices see what earlier
/// ones uncovered.
#[derive(Debug)]
pub struct ExploreAgent<F: Scalar> {
    cfg: ExploreConfig<F>,
    seed: u64,
    pub qnet: ValueNet<F>,
    target: ValueNet<F>,
    replay: ReplayBuffer<ExploreTransition<F>>,
    learner_steps: u64,
    episodes: u64,
}

impl<F: Scalar> ExploreAgent<F> {
    pub fn new(cfg: ExploreConfig<F>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let qnet = ValueNet::new(&cfg.head, seeds::derive(seed, "explore-head", 0))?;
        let target = qnet.clone();
        let replay = ReplayBuffer::new(cfg.replay_capacity, seeds::derive(seed, "explore-replay", 0))?;
        Ok(ExploreAgent { cfg, seed, qnet, target, replay, learner_steps: 0, episodes: 0 })
    }

    pub fn cfg(&self) -> &ExploreConfig<F> {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn note_episode(&mut self) {
        self.episodes += 1;
    }

    pub fn q_value(&self, input: ArrayView1<'_, F>) -> Result<F> {
        self.qnet.value(input)
    }

    /// Picks up to `m1` unexplored, non-removed nodes epsilon-greedily and
    /// reveals their edges in `net` as it goes. Exact Q ties keep the lowest
    /// node id. Runs short and flags `shortage` when candidates run out.
    pub fn select_explore_nodes<R: Rng>(
        &self,
        net: &mut ContactNetwork,
        beliefs: ArrayView1<'_, F>,
        infectious: &[bool],
        m1: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<ExploreOutcome<F>> {
        let n = net.n();
        if beliefs.len() != n || infectious.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} beliefs and infection flags"),
                got: format!("{} and {}", beliefs.len(), infectious.len()),
            });
        }
        let mut picks = Vec::new();
        let mut candidate_sets = Vec::new();
        let mut shortage = false;
        for _ in 0..m1 {
            let cands: Vec<usize> =
                (0..n).filter(|&k| !net.is_explored(k) && !net.is_removed(k)).collect();
            if cands.is_empty() {
                shortage = true;
                break;
            }
            let state = explore_state::<F>(net, infectious);
            let mut inputs = Array2::zeros((cands.len(), 5));
            for (r, &k) in cands.iter().enumerate() {
                let act = explore_action_features(net, beliefs, k);
                inputs[(r, 0)] = state[0];
                inputs[(r, 1)] = state[1];
                inputs[(r, 2)] = act[0];
                inputs[(r, 3)] = act[1];
                inputs[(r, 4)] = act[2];
            }
            let choice = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..cands.len())
            } else {
                let q = self.qnet.forward(inputs.view())?;
                let mut best = 0;
                for r in 1..cands.len() {
                    if q[(r, 0)] > q[(best, 0)] {
                        best = r;
                    }
                }
                best
            };
            let node = cands[choice];
            let new_edges = net.explore_node_edges(node)?;
            picks.push(ExplorePick { node, input: inputs.row(choice).to_owned(), new_edges });
            candidate_sets.push(inputs);
        }
        Ok(ExploreOutcome { picks, candidates: candidate_sets, shortage })
    }

    /// Turns one exploration step into chained transitions and pushes them
    /// into replay. `infectious` must be the mask the picks were made under.
    pub fn push_step(&mut self, outcome: &ExploreOutcome<F>, infectious: &[bool]) {
        let m = outcome.picks.len();
        for i in 0..m {
            let reward = explore_reward(&outcome.picks[i].new_edges, infectious, self.cfg.rho);
            let (next_inputs, done) = if i + 1 < m {
                (outcome.candidates[i + 1].clone(), false)
            } else {
                (Array2::zeros((0, 5)), true)
            };
            self.replay.push(ExploreTransition {
                input: outcome.picks[i].input.clone(),
                reward,
                next_inputs,
                done,
            });
        }
    }

    fn divergence(episode: u64, e: Error) -> Error {
        match e {
            Error::NonFiniteGradient => Error::Diverged {
                episode: episode as usize,
                reason: "non-finite gradient in explore update".into(),
            },
            other => other,
        }
    }

    /// One TD(0) minibatch update over chained picks. Returns the loss, or
    /// `None` while replay holds fewer transitions than one minibatch.
    pub fn learn_minibatch(&mut self) -> Result<Option<F>> {
        let b = self.cfg.minibatch;
        if self.replay.len() < b {
            return Ok(None);
        }
        let idxs = self.replay.sample_indices(b)?;
        let in_dim = self.cfg.head[0].in_dim;
        let mut xs = Array2::zeros((b, in_dim));
        let mut ys = Array1::zeros(b);
        for (row, &i) in idxs.iter().enumerate() {
            let tr = self.replay.get(i);
            let mut y = tr.reward;
            if !tr.done && tr.next_inputs.nrows() > 0 {
                let q = self.target.forward(tr.next_inputs.view())?;
                let mut best = q[(0, 0)];
                for r in 1..q.nrows() {
                    if q[(r, 0)] > best {
                        best = q[(r, 0)];
                    }
                }
                y = y + self.cfg.discount * best;
            }
            xs.row_mut(row).assign(&tr.input);
            ys[row] = y;
        }
        let (q, cache) = self.qnet.forward_cached(xs.view())?;
        let mut d = Array2::zeros((b, 1));
        let mut loss = F::zero();
        let inv_b = F::from_f64(1.0 / b as f64);
        let two = F::from_f64(2.0);
        for row in 0..b {
            let err = q[(row, 0)] - ys[row];
            loss = loss + err * err * inv_b;
            d[(row, 0)] = two * err * inv_b;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                episode: self.episodes as usize,
                reason: "explore TD loss is not finite".into(),
            });
        }
        self.qnet.zero_grads();
        self.qnet.backward(&cache, d.view())?;
        let ep = self.episodes;
        self.qnet.adam_step(&self.cfg.adam).map_err(|e| Self::divergence(ep, e))?;
        self.learner_steps += 1;
        if self.learner_steps % self.cfg.sync_every == 0 {
            self.sync_target()?;
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.sync_from(&self.qnet)
    }

    pub fn save(&self, path: &Path) -> Result<()>
    where
        F: Serialize,
    {
        let manifest = CheckpointManifest {
            kind: "explore".into(),
            seed: self.seed,
            learner_steps: self.learner_steps,
            episodes: self.episodes,
            hyper: serde_json::to_value(&self.cfg)
                .map_err(|e| Error::Checkpoint(format!("hyperparameter encode: {e}")))?,
            nets: Vec::new(),
            blob_len_bytes: 0,
        };
        save_checkpoint(path, manifest, &[("qnet", &self.qnet), ("qnet_target", &self.target)])
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        F: serde::de::DeserializeOwned,
    {
        let (manifest, params) = load_checkpoint(path)?;
        if manifest.kind != "explore" {
            return Err(Error::Checkpoint(format!(
                "expected an explore checkpoint, found kind {:?}",
                manifest.kind
            )));
        }
        if manifest.nets.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "explore checkpoint must hold 2 nets, found {}",
                manifest.nets.len()
            )));
        }
        let cfg: ExploreConfig<F> = serde_json::from_value(manifest.hyper.clone())
            .map_err(|e| Error::Checkpoint(format!("hyperparameter decode: {e}")))?;
        cfg.validate()
            .map_err(|e| Error::Checkpoint(format!("checkpoint hyperparameters invalid: {e}")))?;
        let mut agent = Self::new(cfg, manifest.seed)?;
        let wrap = |e: Error| Error::Checkpoint(format!("parameter load: {e}"));
        agent.qnet.load_flat(&params[0]).map_err(wrap)?;
        agent.target.load_flat(&params[1]).map_err(wrap)?;
        agent.learner_steps = manifest.learner_steps;
        agent.episodes = manifest.episodes;
        Ok(agent)
    }
}
