//! Evaluation drivers: paired replications, the two comparison setups, and
//! the CSV artifacts they produce.
//!
//! Every method in a comparison sees the same sequence of (graph, epidemic,
//! control) seeds, derived from the master seed and the replication index
//! alone. Differences between result rows therefore come from the methods,
//! not from sampling different worlds. Replications fan out across threads;
//! results are merged by replication index, so thread scheduling never
//! changes any output byte.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::Error;
use crate::harness::record::{ACTION_EXPLORE, ACTION_REMOVE};
use crate::harness::{
    run_episode, BeliefRow, Controller, EpisodeSpec, ExperimentConfig, PreReveal, RemoveModule,
};
use crate::seeds;
use crate::{Explorer, Policy, Result};

/// One replication's outcome under one method configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRow {
    pub setup: u8,
    pub method: String,
    /// Exploration budget; 0 for methods that never explore.
    pub m1: usize,
    pub m2: usize,
    pub p_r: Option<f64>,
    pub rep: usize,
    pub graph_seed: u64,
    pub epidemic_seed: u64,
    pub r_a: f64,
}

/// Aggregate over the replications of one method configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub setup: u8,
    pub method: String,
    pub m1: usize,
    pub m2: usize,
    pub p_r: Option<f64>,
    pub reps: usize,
    pub mean_ra: f64,
    pub std_ra: f64,
    /// Half-width of the normal-approximation 95% confidence interval.
    pub ci95: f64,
    pub explore_steps: u64,
    pub remove_steps: u64,
}

/// Everything one evaluation run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub setup: u8,
    pub rows: Vec<SummaryRow>,
    pub per_rep: Vec<RepRow>,
    pub wall_clock_secs: f64,
}

/// One line of the tidy plotting table.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub setup: u8,
    pub method: String,
    pub m1: usize,
    pub m2: usize,
    pub p_r: Option<f64>,
    pub reps: usize,
    pub mean_ra: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Sample mean, sample standard deviation, and 95% CI half-width.
pub fn mean_std_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let ci = 1.96 * std / (n as f64).sqrt();
    (mean, std, ci)
}

/// Seed bundle for replication `rep` of a setup's seed stream.
fn rep_seeds(master: u64, setup_tag: &str, rep: u64) -> (u64, u64, u64) {
    (
        seeds::derive(master, &format!("{setup_tag}-graph"), rep),
        seeds::derive(master, &format!("{setup_tag}-epi"), rep),
        seeds::derive(master, &format!("{setup_tag}-ctl"), rep),
    )
}

/// Runs all replications of one method configuration. Fan-out is across
/// replications; the result vector is ordered by replication index.
#[allow(clippy::too_many_arguments)]
fn run_batch(
    cfg: &ExperimentConfig,
    setup_tag: &str,
    controller: Controller,
    m1: usize,
    m2: usize,
    p_r: Option<f64>,
    reveal_tag: &str,
    policy: Option<&Policy>,
    explorer: Option<&Explorer>,
) -> Result<(Vec<RepRow>, u64, u64)> {
    let master = cfg.experiment.master_seed;
    let reps = cfg.experiment.replications;
    let setup = cfg.experiment.setup;
    let label = controller.label();
    let rows: Vec<Result<(RepRow, u64, u64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (graph_seed, epidemic_seed, control_seed) =
                rep_seeds(master, setup_tag, rep as u64);
            let spec = EpisodeSpec {
                graph: cfg.graph_cfg(graph_seed),
                epidemic: cfg.epidemic_params(),
                zero_beliefs_on_recovery: cfg.control.zero_beliefs_on_recovery,
                m1,
                m2,
                controller,
                epidemic_seed,
                control_seed,
                pre_reveal: p_r.map(|fraction| PreReveal {
                    fraction,
                    seed: seeds::derive(master, reveal_tag, rep as u64),
                }),
            };
            let record = run_episode(&spec, policy, explorer, None)?;
            let explore_steps =
                record.steps.iter().filter(|s| s.action == ACTION_EXPLORE).count() as u64;
            let remove_steps =
                record.steps.iter().filter(|s| s.action == ACTION_REMOVE).count() as u64;
            Ok((
                RepRow {
                    setup,
                    method: label.clone(),
                    m1: if matches!(controller, Controller::Baseline { .. }) { 0 } else { m1 },
                    m2,
                    p_r,
                    rep,
                    graph_seed,
                    epidemic_seed,
                    r_a: record.end.r_a,
                },
                explore_steps,
                remove_steps,
            ))
        })
        .collect();
    let mut out = Vec::with_capacity(reps);
    let mut explore_total = 0u64;
    let mut remove_total = 0u64;
    for row in rows {
        let (row, e, r) = row?;
        debug_assert!((0.0..=1.0).contains(&row.r_a));
        explore_total += e;
        remove_total += r;
        out.push(row);
    }
    Ok((out, explore_total, remove_total))
}

fn summarize(setup: u8, batch: &[RepRow], explore_steps: u64, remove_steps: u64) -> SummaryRow {
    let first = &batch[0];
    let values: Vec<f64> = batch.iter().map(|r| r.r_a).collect();
    let (mean, std, ci) = mean_std_ci(&values);
    SummaryRow {
        setup,
        method: first.method.clone(),
        m1: first.m1,
        m2: first.m2,
        p_r: first.p_r,
        reps: batch.len(),
        mean_ra: mean,
        std_ra: std,
        ci95: ci,
        explore_steps,
        remove_steps,
    }
}

/// Builds a scoped thread pool honoring `experiment.jobs` and runs `f` in it.
fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
    pool.install(f)
}

/// Removal-rule swap study. The trained controller runs unchanged except for
/// the rule filling its remove slot, over every (m1, m2) budget pair in the
/// grid. All variants see identical worlds per replication.
pub fn run_setup1(
    cfg: &ExperimentConfig,
    policy: &Policy,
    explorer: &Explorer,
) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let variants: Vec<RemoveModule> = cfg
        .setup1
        .variants
        .iter()
        .map(|v| RemoveModule::parse(v))
        .collect::<Result<_>>()?;
    with_pool(cfg.experiment.jobs, || {
        let mut rows = Vec::new();
        let mut per_rep = Vec::new();
        for &[m1, m2] in &cfg.setup1.pairs {
            for &variant in &variants {
                let controller = Controller::Hirec { remove: variant };
                let (batch, e, r) = run_batch(
                    cfg,
                    "setup1",
                    controller,
                    m1,
                    m2,
                    None,
                    "setup1-reveal",
                    Some(policy),
                    Some(explorer),
                )?;
                rows.push(summarize(1, &batch, e, r));
                per_rep.extend(batch);
            }
        }
        Ok(RunSummary {
            setup: 1,
            rows,
            per_rep,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    })
}

/// Knowledge-asymmetry study. The trained controller starts with nothing and
/// must explore; each baseline gets a pre-revealed fraction of the graph and
/// removes every step. Replications are paired across every row.
pub fn run_setup2(
    cfg: &ExperimentConfig,
    policy: &Policy,
    explorer: &Explorer,
) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let baselines: Vec<RemoveModule> = cfg
        .setup2
        .baselines
        .iter()
        .map(|b| RemoveModule::parse(b))
        .collect::<Result<_>>()?;
    with_pool(cfg.experiment.jobs, || {
        let mut rows = Vec::new();
        let mut per_rep = Vec::new();
        for &m1 in &cfg.setup2.m1_values {
            let controller = Controller::Hirec { remove: RemoveModule::Analytic };
            let (batch, e, r) = run_batch(
                cfg,
                "setup2",
                controller,
                m1,
                cfg.control.m2,
                None,
                "setup2-reveal",
                Some(policy),
                Some(explorer),
            )?;
            rows.push(summarize(2, &batch, e, r));
            per_rep.extend(batch);
        }
        for &method in &baselines {
            for &p_r in &cfg.setup2.p_r_values {
                let controller = Controller::Baseline { method };
                let (batch, e, r) = run_batch(
                    cfg,
                    "setup2",
                    controller,
                    cfg.control.m1,
                    cfg.control.m2,
                    Some(p_r),
                    "setup2-reveal",
                    None,
                    None,
                )?;
                rows.push(summarize(2, &batch, e, r));
                per_rep.extend(batch);
            }
        }
        Ok(RunSummary {
            setup: 2,
            rows,
            per_rep,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    })
}

/// Builds the episode specification replication `rep` of `eval` would run,
/// so single episodes can be reproduced or recorded outside the batch.
pub fn eval_episode_spec(cfg: &ExperimentConfig, rep: usize) -> Result<EpisodeSpec> {
    cfg.validate()?;
    let controller = cfg.controller()?;
    let p_r = match controller {
        Controller::Baseline { .. } => cfg.experiment.p_r,
        _ => None,
    };
    let master = cfg.experiment.master_seed;
    let (graph_seed, epidemic_seed, control_seed) = rep_seeds(master, "eval", rep as u64);
    Ok(EpisodeSpec {
        graph: cfg.graph_cfg(graph_seed),
        epidemic: cfg.epidemic_params(),
        zero_beliefs_on_recovery: cfg.control.zero_beliefs_on_recovery,
        m1: cfg.control.m1,
        m2: cfg.control.m2,
        controller,
        epidemic_seed,
        control_seed,
        pre_reveal: p_r.map(|fraction| PreReveal {
            fraction,
            seed: seeds::derive(master, "eval-reveal", rep as u64),
        }),
    })
}

/// Evaluates the single controller named in the configuration. Baseline
/// controllers take their granted fraction from `experiment.p_r`. When a
/// belief dump is requested it is filled from replication 0 only, which then
/// runs outside the thread pool so the dump stays deterministic.
pub fn run_eval(
    cfg: &ExperimentConfig,
    policy: Option<&Policy>,
    explorer: Option<&Explorer>,
    mut belief_dump: Option<&mut Vec<BeliefRow>>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let controller = cfg.controller()?;
    let p_r = match controller {
        Controller::Baseline { .. } => cfg.experiment.p_r,
        _ => None,
    };
    if let Some(dump) = belief_dump.as_deref_mut() {
        let spec = eval_episode_spec(cfg, 0)?;
        run_episode(&spec, policy, explorer, Some(dump))?;
    }
    with_pool(cfg.experiment.jobs, || {
        let (batch, e, r) = run_batch(
            cfg,
            "eval",
            controller,
            cfg.control.m1,
            cfg.control.m2,
            p_r,
            "eval-reveal",
            policy,
            explorer,
        )?;
        let row = summarize(cfg.experiment.setup, &batch, e, r);
        Ok(RunSummary {
            setup: cfg.experiment.setup,
            rows: vec![row],
            per_rep: batch,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    })
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunSummary {
    /// Per-replication table, one row per (method configuration, rep).
    pub fn write_replications_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "setup,method,m1,m2,p_r,rep,graph_seed,epidemic_seed,r_a")?;
        for r in &self.per_rep {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.setup,
                r.method,
                r.m1,
                r.m2,
                opt_f64(r.p_r),
                r.rep,
                r.graph_seed,
                r.epidemic_seed,
                r.r_a
            )?;
        }
        Ok(())
    }

    /// Aggregate table, one row per method configuration.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "setup,method,m1,m2,p_r,reps,mean_ra,std_ra,ci95,explore_steps,remove_steps"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.setup,
                r.method,
                r.m1,
                r.m2,
                opt_f64(r.p_r),
                r.reps,
                r.mean_ra,
                r.std_ra,
                r.ci95,
                r.explore_steps,
                r.remove_steps
            )?;
        }
        Ok(())
    }

    /// Writes both tables into `dir` with a setup-specific prefix.
    pub fn save_csv(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut reps = Vec::new();
        self.write_replications_csv(&mut reps)?;
        std::fs::write(dir.join(format!("{prefix}_replications.csv")), reps)?;
        let mut summary = Vec::new();
        self.write_summary_csv(&mut summary)?;
        std::fs::write(dir.join(format!("{prefix}_summary.csv")), summary)?;
        Ok(())
    }
}

/// Parses a per-replication CSV written by `write_replications_csv`.
pub fn read_replications_csv(text: &str) -> Result<Vec<RepRow>> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::RecordFormat("empty replication table".into()))?
        .1;
    if header.trim() != "setup,method,m1,m2,p_r,rep,graph_seed,epidemic_seed,r_a" {
        return Err(Error::RecordFormat(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::RecordFormat(format!(
                "line {}: expected 9 fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str, e: String| Error::RecordFormat(format!("line {}: {what}: {e}", idx + 1));
        rows.push(RepRow {
            setup: fields[0].parse().map_err(|e: std::num::ParseIntError| parse_err("setup", e.to_string()))?,
            method: fields[1].to_string(),
            m1: fields[2].parse().map_err(|e: std::num::ParseIntError| parse_err("m1", e.to_string()))?,
            m2: fields[3].parse().map_err(|e: std::num::ParseIntError| parse_err("m2", e.to_string()))?,
            p_r: if fields[4].is_empty() {
                None
            } else {
                Some(fields[4].parse().map_err(|e: std::num::ParseFloatError| parse_err("p_r", e.to_string()))?)
            },
            rep: fields[5].parse().map_err(|e: std::num::ParseIntError| parse_err("rep", e.to_string()))?,
            graph_seed: fields[6].parse().map_err(|e: std::num::ParseIntError| parse_err("graph_seed", e.to_string()))?,
            epidemic_seed: fields[7].parse().map_err(|e: std::num::ParseIntError| parse_err("epidemic_seed", e.to_string()))?,
            r_a: fields[8].parse().map_err(|e: std::num::ParseFloatError| parse_err("r_a", e.to_string()))?,
        });
    }
    Ok(rows)
}

/// Aggregates per-replication rows into tidy plotting rows, grouped by
/// method configuration in first-appearance order.
pub fn plot_rows(reps: &[RepRow]) -> Vec<PlotRow> {
    let mut order: Vec<(u8, String, usize, usize, Option<f64>)> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for r in reps {
        let key = (r.setup, r.method.clone(), r.m1, r.m2, r.p_r);
        match order.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r.r_a),
            None => {
                order.push(key);
                groups.push(vec![r.r_a]);
            }
        }
    }
    order
        .into_iter()
        .zip(groups)
        .map(|((setup, method, m1, m2, p_r), values)| {
            let (mean, _, ci) = mean_std_ci(&values);
            PlotRow {
                setup,
                method,
                m1,
                m2,
                p_r,
                reps: values.len(),
                mean_ra: mean,
                ci_lo: mean - ci,
                ci_hi: mean + ci,
            }
        })
        .collect()
}

pub fn write_plot_csv<W: Write>(rows: &[PlotRow], mut w: W) -> Result<()> {
    writeln!(w, "setup,method,m1,m2,p_r,reps,mean_ra,ci_lo,ci_hi")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.setup,
            r.method,
            r.m1,
            r.m2,
            opt_f64(r.p_r),
            r.reps,
            r.mean_ra,
            r.ci_lo,
            r.ci_hi
        )?;
    }
    Ok(())
}
