//! Episode records: a JSON-lines serialization of one episode that is
//! complete enough to re-run it deterministically.
//!
//! A record holds one header line (every seed and parameter the episode
//! depends on), one line per control step (the action taken plus what the
//! epidemic did), and one end line (the outcome). Replaying a record rebuilds
//! the episode from its seeds, re-applies the recorded actions verbatim, and
//! must reproduce the same step lines and the same final abnormal rate.
//! Wall-clock time is deliberately not part of the format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::GraphGenConfig;
use crate::harness::env::EpisodeEnv;
use crate::seir::EpidemicParams;
use crate::{Real, Result};

/// Everything a replay needs to rebuild the episode's initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub n: usize,
    pub target_avg_degree: f64,
    pub graph_seed: u64,
    pub epidemic_seed: u64,
    pub control_seed: u64,
    pub beta: f64,
    pub gamma: f64,
    pub t0: usize,
    pub horizon: usize,
    pub n_seeds: usize,
    pub m1: usize,
    pub m2: usize,
    /// Label of the controller that produced the actions, e.g.
    /// "hirec:analytic" or "baseline:degree". Informational for replay.
    pub controller: String,
    /// Fraction of nodes whose edges were revealed before step 0.
    pub p_r: Option<f64>,
    pub reveal_seed: Option<u64>,
    pub zero_beliefs_on_recovery: bool,
}

/// One control step: the action taken and the epidemic's response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStep {
    /// Decision time; the epidemic response is stamped t + 1.
    pub t: usize,
    /// "explore" or "remove".
    pub action: String,
    /// Nodes explored or removed this step, in pick order.
    pub nodes: Vec<usize>,
    /// True when fewer candidates existed than the budget asked for.
    pub shortage: bool,
    /// Nodes newly exposed during this step (ground truth).
    pub new_exposed: Vec<usize>,
    /// Nodes whose symptom onset became visible at the end of this step.
    pub onsets: Vec<usize>,
    /// Nodes that recovered and reconnected during this step.
    pub recovered: Vec<usize>,
}

/// Episode outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEnd {
    /// Fraction of nodes ever exposed or infectious by the horizon.
    pub r_a: f64,
    pub ever_abnormal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RecordLine {
    Header(RecordHeader),
    Step(RecordStep),
    End(RecordEnd),
}

/// A full episode: header, one line per step, end line.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub header: RecordHeader,
    pub steps: Vec<RecordStep>,
    pub end: RecordEnd,
}

pub const ACTION_EXPLORE: &str = "explore";
pub const ACTION_REMOVE: &str = "remove";

impl EpisodeRecord {
    /// Serializes to JSON lines, one object per line, header first.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = serde_json::to_string(&RecordLine::Header(self.header.clone()))?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for step in &self.steps {
            let mut line = serde_json::to_string(&RecordLine::Step(step.clone()))?;
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        let mut line = serde_json::to_string(&RecordLine::End(self.end.clone()))?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out)?;
        String::from_utf8(out).map_err(|e| Error::RecordFormat(e.to_string()))
    }

    /// Parses JSON lines written by [`EpisodeRecord::write_jsonl`]. Blank
    /// lines are ignored; any structural defect is a `RecordFormat` error.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut header: Option<RecordHeader> = None;
        let mut steps: Vec<RecordStep> = Vec::new();
        let mut end: Option<RecordEnd> = None;
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| {
                Error::RecordFormat(format!("line {}: {e}", idx + 1))
            })?;
            match parsed {
                RecordLine::Header(h) => {
                    if header.is_some() {
                        return Err(Error::RecordFormat(format!("line {}: duplicate header", idx + 1)));
                    }
                    if !steps.is_empty() || end.is_some() {
                        return Err(Error::RecordFormat(format!("line {}: header must come first", idx + 1)));
                    }
                    header = Some(h);
                }
                RecordLine::Step(s) => {
                    if header.is_none() {
                        return Err(Error::RecordFormat(format!("line {}: step before header", idx + 1)));
                    }
                    if end.is_some() {
                        return Err(Error::RecordFormat(format!("line {}: step after end line", idx + 1)));
                    }
                    let expected = steps.len();
                    if s.t != expected {
                        return Err(Error::RecordFormat(format!(
                            "line {}: step t = {}, expected {expected}",
                            idx + 1,
                            s.t
                        )));
                    }
                    steps.push(s);
                }
                RecordLine::End(e) => {
                    if header.is_none() {
                        return Err(Error::RecordFormat(format!("line {}: end before header", idx + 1)));
                    }
                    if end.is_some() {
                        return Err(Error::RecordFormat(format!("line {}: duplicate end line", idx + 1)));
                    }
                    end = Some(e);
                }
            }
        }
        let header = header.ok_or_else(|| Error::RecordFormat("missing header line".into()))?;
        let end = end.ok_or_else(|| Error::RecordFormat("missing end line".into()))?;
        if steps.len() != header.horizon {
            return Err(Error::RecordFormat(format!(
                "{} step lines for horizon {}",
                steps.len(),
                header.horizon
            )));
        }
        Ok(EpisodeRecord { header, steps, end })
    }

    pub fn from_jsonl_str(s: &str) -> Result<Self> {
        Self::read_jsonl(s.as_bytes())
    }

    /// Re-runs the episode from its seeds, applying the recorded actions
    /// verbatim. The result must equal the original record; a divergence
    /// means the record and the code no longer agree on the dynamics.
    pub fn replay(&self) -> Result<EpisodeRecord> {
        let h = &self.header;
        let graph = GraphGenConfig {
            n: h.n,
            target_avg_degree: h.target_avg_degree,
            seed: h.graph_seed,
        };
        let epidemic = EpidemicParams {
            beta: h.beta,
            gamma: h.gamma,
            t0: h.t0,
            horizon: h.horizon,
            n_seeds: h.n_seeds,
        };
        let mut env: EpisodeEnv<Real> =
            EpisodeEnv::new(graph, epidemic, h.zero_beliefs_on_recovery, h.epidemic_seed)?;
        match (h.p_r, h.reveal_seed) {
            (Some(p_r), Some(seed)) => {
                env.net.reveal_fraction(p_r, seed)?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::RecordFormat(
                    "p_r and reveal_seed must be present together".into(),
                ));
            }
        }
        let mut steps = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            match s.action.as_str() {
                ACTION_EXPLORE => {
                    for &k in &s.nodes {
                        env.net.explore_node_edges(k)?;
                    }
                }
                ACTION_REMOVE => env.apply_removals(&s.nodes)?,
                other => {
                    return Err(Error::RecordFormat(format!("unknown action {other:?} at t = {}", s.t)));
                }
            }
            let report = env.step_epidemic()?;
            steps.push(RecordStep {
                t: s.t,
                action: s.action.clone(),
                nodes: s.nodes.clone(),
                shortage: s.shortage,
                new_exposed: report.new_exposed,
                onsets: report.onsets,
                recovered: report.recovered,
            });
        }
        Ok(EpisodeRecord {
            header: h.clone(),
            steps,
            end: RecordEnd { r_a: env.abnormal_rate(), ever_abnormal: env.ever_abnormal() },
        })
    }
}
