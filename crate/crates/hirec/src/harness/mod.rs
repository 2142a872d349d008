//! Experiment harness: configuration, the episode protocol, training
//! drivers, and the two evaluation setups.
//!
//! The harness runs everything at [`Real`] precision. Determinism is a hard
//! requirement throughout: every source of randomness is derived from the
//! experiment master seed with a named stream tag plus the replication index,
//! so any replication can be reproduced in isolation and paired comparisons
//! see identical graphs and epidemics.

pub mod env;
pub mod record;
pub mod setups;
pub mod training;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    select_remove_nodes, ExploreConfig, GraphSnapshot, PolicyChoice, PolicyConfig,
};
use crate::baselines::{degree_select, eigendrop_select, netshield_plus_select, netshield_select};
use crate::error::Error;
use crate::graph::GraphGenConfig;
use crate::seir::EpidemicParams;
use crate::{Explorer, Policy, Real, Result};

pub use env::EpisodeEnv;
pub use record::{EpisodeRecord, RecordEnd, RecordHeader, RecordStep, ACTION_EXPLORE, ACTION_REMOVE};
pub use setups::{
    eval_episode_spec, mean_std_ci, plot_rows, read_replications_csv, run_eval, run_setup1,
    run_setup2, write_plot_csv, PlotRow, RepRow, RunSummary, SummaryRow,
};
pub use training::{train_explore, train_policy, TrainReport};

/// Which node-removal rule fills the remove slot of a controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemoveModule {
    /// Greedy minimization of the expected new exposures, using beliefs.
    Analytic,
    /// Highest observable degree first.
    Degree,
    /// Eigenscore shielding on the observable graph.
    Netshield,
    /// Batched eigenscore shielding with recomputation between batches.
    NetshieldPlus,
    /// Pick whichever node's deletion lowers the top eigenvalue most.
    Eigendrop,
}

/// Batch size used whenever the batched shield rule runs.
pub const NETSHIELD_PLUS_BATCH: usize = 2;

impl RemoveModule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(RemoveModule::Analytic),
            "degree" => Ok(RemoveModule::Degree),
            "netshield" => Ok(RemoveModule::Netshield),
            "netshield-plus" => Ok(RemoveModule::NetshieldPlus),
            "eigendrop" => Ok(RemoveModule::Eigendrop),
            other => Err(Error::Config(format!(
                "unknown remove module {other:?}; expected one of analytic, degree, netshield, netshield-plus, eigendrop"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RemoveModule::Analytic => "analytic",
            RemoveModule::Degree => "degree",
            RemoveModule::Netshield => "netshield",
            RemoveModule::NetshieldPlus => "netshield-plus",
            RemoveModule::Eigendrop => "eigendrop",
        }
    }
}

/// Who decides, each step, between exploring M1 nodes and removing M2 nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    /// Trained policy picks the action; trained explorer picks explore
    /// targets; `remove` picks removal targets.
    Hirec { remove: RemoveModule },
    /// Removes every step with the analytic rule. Needs no checkpoints.
    AlwaysRemove,
    /// Explores every step, picking targets uniformly at random.
    AlwaysExplore,
    /// Fair coin between exploring (uniform targets) and removing
    /// (analytic rule). The untrained reference point.
    UniformRandom,
    /// Never explores; removes every step with `method` on whatever part of
    /// the graph has been granted up front.
    Baseline { method: RemoveModule },
}

impl Controller {
    /// Parses the config spelling: "hirec", "always-remove", "always-explore",
    /// "uniform-random", or "baseline:<method>". The `remove_module` setting
    /// fills the removal slot of "hirec".
    pub fn parse(controller: &str, remove_module: RemoveModule) -> Result<Self> {
        match controller {
            "hirec" => Ok(Controller::Hirec { remove: remove_module }),
            "always-remove" => Ok(Controller::AlwaysRemove),
            "always-explore" => Ok(Controller::AlwaysExplore),
            "uniform-random" => Ok(Controller::UniformRandom),
            other => {
                if let Some(method) = other.strip_prefix("baseline:") {
                    Ok(Controller::Baseline { method: RemoveModule::parse(method)? })
                } else {
                    Err(Error::Config(format!(
                        "unknown controller {other:?}; expected hirec, always-remove, always-explore, uniform-random, or baseline:<method>"
                    )))
                }
            }
        }
    }

    /// True when evaluation requires trained policy and explore checkpoints.
    pub fn needs_checkpoints(self) -> bool {
        matches!(self, Controller::Hirec { .. })
    }

    /// Stable label used in records and result tables.
    pub fn label(self) -> String {
        match self {
            Controller::Hirec { remove } => format!("hirec:{}", remove.name()),
            Controller::AlwaysRemove => "always-remove".into(),
            Controller::AlwaysExplore => "always-explore".into(),
            Controller::UniformRandom => "uniform-random".into(),
            Controller::Baseline { method } => format!("baseline:{}", method.name()),
        }
    }
}

/// Pre-revealed knowledge granted to a controller before step 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreReveal {
    /// Fraction of nodes whose incident edges become known.
    pub fraction: f64,
    pub seed: u64,
}

/// Full description of one episode, sufficient to reproduce it.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub graph: GraphGenConfig,
    pub epidemic: EpidemicParams,
    pub zero_beliefs_on_recovery: bool,
    pub m1: usize,
    pub m2: usize,
    pub controller: Controller,
    pub epidemic_seed: u64,
    /// Seeds the controller's own randomness (coin flips, random picks).
    pub control_seed: u64,
    pub pre_reveal: Option<PreReveal>,
}

/// One belief-table row, dumped per step when requested. `q` stays true
/// while no onset has been observed for the node, matching the estimator's
/// own indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefRow {
    pub t: usize,
    pub node: usize,
    pub p: f64,
    pub q: bool,
}

/// Checks the one-action-per-step contract: the performed action must use
/// its full budget unless the selector reported a shortage of candidates.
fn enforce_budget(action: &str, picked: usize, budget: usize, shortage: bool) -> Result<()> {
    if picked == budget {
        return Ok(());
    }
    if shortage && picked < budget {
        return Ok(());
    }
    Err(Error::ConstraintViolation(format!(
        "{action} step picked {picked} nodes with budget {budget} and no shortage"
    )))
}

/// Runs one full episode under `spec` and returns its record.
///
/// Each control step does, in order: read the current beliefs, let the
/// controller choose exactly one action (explore M1 nodes or remove M2
/// nodes), apply it to the network, then advance the epidemic one step and
/// fold the new observations into the beliefs. With checkpointed agents the
/// whole episode is a deterministic function of the three seeds in `spec`.
pub fn run_episode(
    spec: &EpisodeSpec,
    policy: Option<&Policy>,
    explorer: Option<&Explorer>,
    mut belief_dump: Option<&mut Vec<BeliefRow>>,
) -> Result<EpisodeRecord> {
    if spec.controller.needs_checkpoints() && (policy.is_none() || explorer.is_none()) {
        return Err(Error::Checkpoint(
            "hirec controller needs trained policy and explore agents".into(),
        ));
    }
    if spec.m1 == 0 || spec.m2 == 0 {
        return Err(Error::Config("m1 and m2 must be at least 1".into()));
    }
    let mut env: EpisodeEnv<Real> = EpisodeEnv::new(
        spec.graph,
        spec.epidemic,
        spec.zero_beliefs_on_recovery,
        spec.epidemic_seed,
    )?;
    if let Some(reveal) = spec.pre_reveal {
        let revealed = env.net.reveal_fraction(reveal.fraction, reveal.seed)?;
        if revealed == 0 {
            log::info!(
                "pre-reveal granted no nodes (fraction {}); selection degenerates to id order",
                reveal.fraction
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.control_seed);
    let horizon = env.horizon();
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if let Some(dump) = belief_dump.as_deref_mut() {
            let p = env.beliefs.current_beliefs();
            let q = env.beliefs.current_q();
            for k in 0..env.n() {
                dump.push(BeliefRow { t, node: k, p: p[k], q: q[k] });
            }
        }
        let choice = match spec.controller {
            Controller::Hirec { .. } => {
                let snap = GraphSnapshot::capture(&env.net, env.beliefs.current_beliefs())?;
                policy.unwrap().greedy_choice(&snap)?
            }
            Controller::AlwaysRemove | Controller::Baseline { .. } => PolicyChoice::Remove,
            Controller::AlwaysExplore => PolicyChoice::Explore,
            Controller::UniformRandom => {
                if rng.gen_bool(0.5) {
                    PolicyChoice::Explore
                } else {
                    PolicyChoice::Remove
                }
            }
        };
        let (action, nodes, shortage) = match choice {
            PolicyChoice::Explore => {
                let (nodes, shortage) = match spec.controller {
                    Controller::Hirec { .. } => {
                        let infectious = env.infectious_mask();
                        let beliefs = env.beliefs.current_beliefs().to_owned();
                        let outcome = explorer.unwrap().select_explore_nodes(
                            &mut env.net,
                            beliefs.view(),
                            &infectious,
                            spec.m1,
                            0.0,
                            &mut rng,
                        )?;
                        let nodes: Vec<usize> = outcome.picks.iter().map(|p| p.node).collect();
                        (nodes, outcome.shortage)
                    }
                    _ => env.explore_randomly(spec.m1, &mut rng)?,
                };
                enforce_budget(ACTION_EXPLORE, nodes.len(), spec.m1, shortage)?;
                (ACTION_EXPLORE, nodes, shortage)
            }
            PolicyChoice::Remove => {
                let method = match spec.controller {
                    Controller::Hirec { remove } => remove,
                    Controller::Baseline { method } => method,
                    _ => RemoveModule::Analytic,
                };
                let (nodes, shortage) = removal_picks(&env, method, spec.m2)?;
                env.apply_removals(&nodes)?;
                enforce_budget(ACTION_REMOVE, nodes.len(), spec.m2, shortage)?;
                (ACTION_REMOVE, nodes, shortage)
            }
        };
        let report = env.step_epidemic()?;
        steps.push(RecordStep {
            t,
            action: action.into(),
            nodes,
            shortage,
            new_exposed: report.new_exposed,
            onsets: report.onsets,
            recovered: report.recovered,
        });
    }
    Ok(EpisodeRecord {
        header: RecordHeader {
            n: spec.graph.n,
            target_avg_degree: spec.graph.target_avg_degree,
            graph_seed: spec.graph.seed,
            epidemic_seed: spec.epidemic_seed,
            control_seed: spec.control_seed,
            beta: spec.epidemic.beta,
            gamma: spec.epidemic.gamma,
            t0: spec.epidemic.t0,
            horizon: spec.epidemic.horizon,
            n_seeds: spec.epidemic.n_seeds,
            m1: spec.m1,
            m2: spec.m2,
            controller: spec.controller.label(),
            p_r: spec.pre_reveal.map(|r| r.fraction),
            reveal_seed: spec.pre_reveal.map(|r| r.seed),
            zero_beliefs_on_recovery: spec.zero_beliefs_on_recovery,
        },
        steps,
        end: RecordEnd { r_a: env.abnormal_rate(), ever_abnormal: env.ever_abnormal() },
    })
}

/// Selects up to `m2` removal targets with `method` on the current state.
fn removal_picks(
    env: &EpisodeEnv<Real>,
    method: RemoveModule,
    m2: usize,
) -> Result<(Vec<usize>, bool)> {
    let active = env.net.removed_mask().iter().filter(|&&r| !r).count();
    let nodes = match method {
        RemoveModule::Analytic => {
            let p = env.beliefs.current_beliefs().to_owned();
            let q = env.beliefs.current_q();
            let beta = env.sim.params().beta;
            let sel = select_remove_nodes(&env.net, p.view(), &q, beta, m2)?;
            return Ok((sel.picks, sel.shortage));
        }
        RemoveModule::Degree => degree_select(&env.net, m2),
        RemoveModule::Netshield => netshield_select::<Real>(&env.net, m2)?,
        RemoveModule::NetshieldPlus => {
            netshield_plus_select::<Real>(&env.net, m2, NETSHIELD_PLUS_BATCH)?
        }
        RemoveModule::Eigendrop => eigendrop_select::<Real>(&env.net, m2)?,
    };
    Ok((nodes, active < m2))
}

/// Experiment configuration, read from TOML.
///
/// Every section has defaults, so an empty document is a valid desk-scale
/// configuration; files override only what they mention. Unknown keys are
/// rejected so typos surface as errors with the offending line.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSection,
    pub epidemic: EpidemicSection,
    pub control: ControlSection,
    pub experiment: ExperimentSection,
    pub setup1: Setup1Grid,
    pub setup2: Setup2Grid,
    pub training: TrainingSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub n: usize,
    pub target_avg_degree: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection { n: 100, target_avg_degree: 4.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicSection {
    pub beta: f64,
    pub gamma: f64,
    pub t0: usize,
    pub horizon: usize,
    pub n_seeds: usize,
}

impl Default for EpidemicSection {
    fn default() -> Self {
        EpidemicSection { beta: 0.012, gamma: 0.02, t0: 5, horizon: 50, n_seeds: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    /// Controller spelling; see [`Controller::parse`].
    pub controller: String,
    pub m1: usize,
    pub m2: usize,
    /// Removal rule used inside the hirec controller.
    pub remove_module: String,
    pub policy_checkpoint: Option<PathBuf>,
    pub explore_checkpoint: Option<PathBuf>,
    pub zero_beliefs_on_recovery: bool,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            controller: "hirec".into(),
            m1: 4,
            m2: 1,
            remove_module: "analytic".into(),
            policy_checkpoint: None,
            explore_checkpoint: None,
            zero_beliefs_on_recovery: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Which evaluation setup the compare command runs: 1 or 2.
    pub setup: u8,
    /// Pre-revealed node fraction for single-run baseline evaluation.
    pub p_r: Option<f64>,
    pub replications: usize,
    pub master_seed: u64,
    /// Worker threads for replication fan-out; 0 means all cores.
    pub jobs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection { setup: 1, p_r: None, replications: 200, master_seed: 1, jobs: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Setup1Grid {
    /// Budget pairs evaluated, each entry [m1, m2].
    pub pairs: Vec<[usize; 2]>,
    /// Removal rules swapped into the trained controller.
    pub variants: Vec<String>,
}

impl Default for Setup1Grid {
    fn default() -> Self {
        Setup1Grid {
            pairs: vec![[4, 1], [6, 1], [10, 2], [15, 2]],
            variants: vec![
                "analytic".into(),
                "degree".into(),
                "netshield".into(),
                "netshield-plus".into(),
                "eigendrop".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Setup2Grid {
    /// Exploration budgets evaluated for the zero-knowledge controller.
    pub m1_values: Vec<usize>,
    /// Pre-revealed fractions granted to the baselines.
    pub p_r_values: Vec<f64>,
    pub baselines: Vec<String>,
}

impl Default for Setup2Grid {
    fn default() -> Self {
        Setup2Grid {
            m1_values: vec![4, 10, 15],
            p_r_values: vec![0.6, 0.8, 1.0],
            baselines: vec![
                "degree".into(),
                "netshield".into(),
                "netshield-plus".into(),
                "eigendrop".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub explore_episodes: usize,
    pub policy_episodes: usize,
    /// Replay updates applied after each finished policy episode.
    pub policy_updates_per_episode: usize,
    /// Replay updates applied after each explore step during training.
    pub explore_updates_per_step: usize,
    pub policy: PolicyConfig<Real>,
    pub explore: ExploreConfig<Real>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            explore_episodes: 400,
            policy_episodes: 400,
            policy_updates_per_episode: 8,
            explore_updates_per_step: 1,
            policy: PolicyConfig::default(),
            explore: ExploreConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; syntax and unknown-key errors keep the parser's
    /// line and column information.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.graph_cfg(0).validate()?;
        self.epidemic_params().validate(self.graph.n)?;
        let controller = self.controller()?;
        if self.control.m1 == 0 || self.control.m1 >= self.graph.n {
            return Err(Error::Config(format!(
                "control.m1 must be in 1..{}, got {}",
                self.graph.n, self.control.m1
            )));
        }
        if self.control.m2 == 0 || self.control.m2 >= self.graph.n {
            return Err(Error::Config(format!(
                "control.m2 must be in 1..{}, got {}",
                self.graph.n, self.control.m2
            )));
        }
        match self.experiment.setup {
            1 | 2 => {}
            s => return Err(Error::Config(format!("experiment.setup must be 1 or 2, got {s}"))),
        }
        if self.experiment.replications == 0 {
            return Err(Error::Config("experiment.replications must be at least 1".into()));
        }
        if let Some(p_r) = self.experiment.p_r {
            if !(0.0..=1.0).contains(&p_r) {
                return Err(Error::Config(format!(
                    "experiment.p_r must lie in [0, 1], got {p_r}"
                )));
            }
        }
        if matches!(controller, Controller::Baseline { .. }) && self.experiment.p_r.is_none() {
            return Err(Error::Config(
                "baseline controllers need experiment.p_r to grant initial knowledge".into(),
            ));
        }
        if self.setup1.pairs.is_empty() {
            return Err(Error::Config("setup1.pairs must not be empty".into()));
        }
        for &[m1, m2] in &self.setup1.pairs {
            if m1 == 0 || m2 == 0 || m1 >= self.graph.n || m2 >= self.graph.n {
                return Err(Error::Config(format!(
                    "setup1 pair [{m1}, {m2}] out of range for n = {}",
                    self.graph.n
                )));
            }
        }
        if self.setup1.variants.is_empty() {
            return Err(Error::Config("setup1.variants must not be empty".into()));
        }
        for v in &self.setup1.variants {
            RemoveModule::parse(v)?;
        }
        if self.setup2.m1_values.is_empty() {
            return Err(Error::Config("setup2.m1_values must not be empty".into()));
        }
        for &m1 in &self.setup2.m1_values {
            if m1 == 0 || m1 >= self.graph.n {
                return Err(Error::Config(format!(
                    "setup2 m1 value {m1} out of range for n = {}",
                    self.graph.n
                )));
            }
        }
        if self.setup2.p_r_values.is_empty() {
            return Err(Error::Config("setup2.p_r_values must not be empty".into()));
        }
        for &p_r in &self.setup2.p_r_values {
            if !(0.0..=1.0).contains(&p_r) {
                return Err(Error::Config(format!(
                    "setup2 p_r value {p_r} must lie in [0, 1]"
                )));
            }
        }
        if self.setup2.baselines.is_empty() {
            return Err(Error::Config("setup2.baselines must not be empty".into()));
        }
        for b in &self.setup2.baselines {
            RemoveModule::parse(b)?;
        }
        self.training.policy.validate()?;
        self.training.explore.validate()?;
        Ok(())
    }

    pub fn controller(&self) -> Result<Controller> {
        let remove = RemoveModule::parse(&self.control.remove_module)?;
        Controller::parse(&self.control.controller, remove)
    }

    pub fn graph_cfg(&self, seed: u64) -> GraphGenConfig {
        GraphGenConfig { n: self.graph.n, target_avg_degree: self.graph.target_avg_degree, seed }
    }

    pub fn epidemic_params(&self) -> EpidemicParams {
        EpidemicParams {
            beta: self.epidemic.beta,
            gamma: self.epidemic.gamma,
            t0: self.epidemic.t0,
            horizon: self.epidemic.horizon,
            n_seeds: self.epidemic.n_seeds,
        }
    }

    /// Loads whatever checkpoints the configured controller needs.
    /// A hirec controller without both checkpoint paths is a config error;
    /// an unreadable or mismatched file is a checkpoint error.
    pub fn load_agents(&self) -> Result<(Option<Policy>, Option<Explorer>)> {
        let controller = self.controller()?;
        if !controller.needs_checkpoints() {
            return Ok((None, None));
        }
        let policy_path = self.control.policy_checkpoint.as_ref().ok_or_else(|| {
            Error::Config("hirec controller needs control.policy_checkpoint".into())
        })?;
        let explore_path = self.control.explore_checkpoint.as_ref().ok_or_else(|| {
            Error::Config("hirec controller needs control.explore_checkpoint".into())
        })?;
        let policy = Policy::load(policy_path)?;
        let explorer = Explorer::load(explore_path)?;
        Ok((Some(policy), Some(explorer)))
    }
}
