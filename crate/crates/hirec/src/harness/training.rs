//! Training drivers for the two learned modules.
//!
//! The explore agent trains first, against a scripted controller that flips
//! a fair coin each step between exploring (the agent's own epsilon-greedy
//! picks) and removing (the analytic rule). The policy agent then trains on
//! top of the frozen explore agent, choosing between the two modules itself.
//! Both drivers derive every random stream from the experiment master seed,
//! so the same configuration always produces bit-identical checkpoints.
//!
//! A non-finite loss or gradient aborts the run: the offending agent's last
//! consistent state is saved next to the regular checkpoint with a
//! "-diverged" suffix and the error propagates to the caller.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{policy_reward_stream, select_remove_nodes, GraphSnapshot, PolicyChoice};
use crate::error::Error;
use crate::harness::env::EpisodeEnv;
use crate::harness::ExperimentConfig;
use crate::seeds;
use crate::{Explorer, Policy, Real, Result};

/// What a training run did, for logs and reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub episodes: usize,
    pub learner_steps: u64,
    /// Loss of the last applied update, if any update ran.
    pub last_loss: Option<f64>,
    /// Mean abnormal rate over the final quarter of training episodes.
    pub recent_mean_ra: f64,
    pub wall_clock_secs: f64,
}

fn mean_tail(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let tail = (values.len() / 4).max(1);
    let slice = &values[values.len() - tail..];
    slice.iter().sum::<f64>() / tail as f64
}

fn checkpoint_paths(out_dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (out_dir.join(format!("{stem}.json")), out_dir.join(format!("{stem}-diverged.json")))
}

/// Saves the current state on divergence, then passes the error through.
fn abort_with_checkpoint<A>(
    agent: &A,
    save: impl Fn(&A, &Path) -> Result<()>,
    path: &Path,
    err: Error,
) -> Error {
    match save(agent, path) {
        Ok(()) => log::error!("training diverged; state saved to {}", path.display()),
        Err(e) => log::error!("training diverged and checkpoint save failed: {e}"),
    }
    err
}

/// Trains the explore agent under the scripted coin-flip controller and
/// writes its checkpoint to `<out_dir>/explore.json`.
///
/// With zero configured episodes the returned agent still carries its
/// freshly initialized parameters and the checkpoint is written unchanged.
pub fn train_explore(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Explorer, TrainReport)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let master = cfg.experiment.master_seed;
    let episodes = cfg.training.explore_episodes;
    let mut agent = Explorer::new(cfg.training.explore.clone(), seeds::derive(master, "explore-agent", 0))?;
    let (final_path, diverged_path) = checkpoint_paths(out_dir, "explore");
    let mut last_loss = None;
    let mut ra_history = Vec::with_capacity(episodes);

    for episode in 0..episodes {
        let progress = episode as f64 / episodes as f64;
        let epsilon = cfg.training.explore.epsilon.at(progress);
        let mut env: EpisodeEnv<Real> = EpisodeEnv::new(
            cfg.graph_cfg(seeds::derive(master, "train-explore-graph", episode as u64)),
            cfg.epidemic_params(),
            cfg.control.zero_beliefs_on_recovery,
            seeds::derive(master, "train-explore-epi", episode as u64),
        )?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(master, "train-explore-ctl", episode as u64));
        agent.note_episode();
        for _ in 0..env.horizon() {
            let infectious = env.infectious_mask();
            if rng.gen_bool(0.5) {
                let beliefs = env.beliefs.current_beliefs().to_owned();
                let outcome = agent.select_explore_nodes(
                    &mut env.net,
                    beliefs.view(),
                    &infectious,
                    cfg.control.m1,
                    epsilon,
                    &mut rng,
                )?;
                agent.push_step(&outcome, &infectious);
            } else {
                let p = env.beliefs.current_beliefs().to_owned();
                let q = env.beliefs.current_q();
                let sel =
                    select_remove_nodes(&env.net, p.view(), &q, env.sim.params().beta, cfg.control.m2)?;
                env.apply_removals(&sel.picks)?;
            }
            for _ in 0..cfg.training.explore_updates_per_step {
                match agent.learn_minibatch() {
                    Ok(Some(loss)) => last_loss = Some(loss),
                    Ok(None) => {}
                    Err(err) => {
                        return Err(abort_with_checkpoint(
                            &agent,
                            |a, p| a.save(p),
                            &diverged_path,
                            err,
                        ));
                    }
                }
            }
            env.step_epidemic()?;
        }
        ra_history.push(env.abnormal_rate());
    }

    agent.save(&final_path)?;
    let report = TrainReport {
        episodes,
        learner_steps: agent.learner_steps(),
        last_loss,
        recent_mean_ra: mean_tail(&ra_history),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((agent, report))
}

/// Trains the policy agent on top of a frozen explore agent and writes its
/// checkpoint to `<out_dir>/policy.json`.
///
/// The explorer runs greedily during policy training; exploration noise
/// lives entirely in the policy's own epsilon schedule. Episode rewards are
/// resolved after the horizon, since a step's consequence only becomes
/// visible one incubation later.
pub fn train_policy(
    cfg: &ExperimentConfig,
    explorer: &Explorer,
    out_dir: &Path,
) -> Result<(Policy, TrainReport)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let master = cfg.experiment.master_seed;
    let episodes = cfg.training.policy_episodes;
    let mut agent = Policy::new(cfg.training.policy.clone(), seeds::derive(master, "policy-agent", 0))?;
    let (final_path, diverged_path) = checkpoint_paths(out_dir, "policy");
    let mut last_loss = None;
    let mut ra_history = Vec::with_capacity(episodes);
    let t0 = cfg.epidemic.t0;
    let horizon = cfg.epidemic.horizon;

    for episode in 0..episodes {
        let progress = episode as f64 / episodes as f64;
        let epsilon = cfg.training.policy.epsilon.at(progress);
        let mut env: EpisodeEnv<Real> = EpisodeEnv::new(
            cfg.graph_cfg(seeds::derive(master, "train-policy-graph", episode as u64)),
            cfg.epidemic_params(),
            cfg.control.zero_beliefs_on_recovery,
            seeds::derive(master, "train-policy-epi", episode as u64),
        )?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(master, "train-policy-ctl", episode as u64));
        let mut steps: Vec<(GraphSnapshot<Real>, PolicyChoice)> = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let snap = GraphSnapshot::capture(&env.net, env.beliefs.current_beliefs())?;
            let choice = agent.select(&snap, epsilon, &mut rng)?;
            match choice {
                PolicyChoice::Explore => {
                    let infectious = env.infectious_mask();
                    let beliefs = env.beliefs.current_beliefs().to_owned();
                    explorer.select_explore_nodes(
                        &mut env.net,
                        beliefs.view(),
                        &infectious,
                        cfg.control.m1,
                        0.0,
                        &mut rng,
                    )?;
                }
                PolicyChoice::Remove => {
                    let p = env.beliefs.current_beliefs().to_owned();
                    let q = env.beliefs.current_q();
                    let sel = select_remove_nodes(
                        &env.net,
                        p.view(),
                        &q,
                        env.sim.params().beta,
                        cfg.control.m2,
                    )?;
                    env.apply_removals(&sel.picks)?;
                }
            }
            steps.push((snap, choice));
            env.step_epidemic()?;
        }
        let stream = policy_reward_stream(env.sim.onset_log(), t0, horizon);
        agent.push_episode(&steps, &stream)?;
        for _ in 0..cfg.training.policy_updates_per_episode {
            match agent.learn_minibatch() {
                Ok(Some(loss)) => last_loss = Some(loss),
                Ok(None) => {}
                Err(err) => {
                    return Err(abort_with_checkpoint(&agent, |a, p| a.save(p), &diverged_path, err));
                }
            }
        }
        ra_history.push(env.abnormal_rate());
    }

    agent.save(&final_path)?;
    let report = TrainReport {
        episodes,
        learner_steps: agent.learner_steps(),
        last_loss,
        recent_mean_ra: mean_tail(&ra_history),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((agent, report))
}
