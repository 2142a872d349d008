//! Ground-truth contact networks and the observability layer.
//!
//! The true graph is static for the whole episode. Exploration and initial
//! reveals move edges into the known set (monotone within an episode), and
//! quarantine is a removal mask over nodes, so reconnection on recovery is
//! exact: flags flip back and the adjacency is bit-identical to before.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Parameters for the scale-free generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GraphGenConfig {
    pub n: usize,
    pub target_avg_degree: f64,
    pub seed: u64,
}

impl GraphGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Config(format!("graph.n must be >= 3, got {}", self.n)));
        }
        if self.target_avg_degree < 2.0 {
            return Err(Error::Config(format!(
                "graph.target_avg_degree must be >= 2, got {}",
                self.target_avg_degree
            )));
        }
        let m = (self.target_avg_degree / 2.0).round() as usize;
        if m + 2 > self.n {
            return Err(Error::Config(format!(
                "graph.n = {} too small for target average degree {} (needs at least {})",
                self.n,
                self.target_avg_degree,
                m + 2
            )));
        }
        Ok(())
    }
}

/// Static ground-truth graph plus what the controller has learned about it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactNetwork {
    n: usize,
    seed: u64,
    true_adj: Vec<BTreeSet<usize>>,
    known_adj: Vec<BTreeSet<usize>>,
    true_edge_count: usize,
    known_edge_count: usize,
    explored: Vec<bool>,
    removed: Vec<bool>,
}

impl ContactNetwork {
    /// Build a network from an explicit undirected edge list. All edges start
    /// unknown. Rejects self-loops, out-of-range endpoints, and duplicates.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], seed: u64) -> Result<Self> {
        let mut net = ContactNetwork {
            n,
            seed,
            true_adj: vec![BTreeSet::new(); n],
            known_adj: vec![BTreeSet::new(); n],
            true_edge_count: 0,
            known_edge_count: 0,
            explored: vec![false; n],
            removed: vec![false; n],
        };
        for &(u, v) in edges {
            net.insert_true_edge(u, v)?;
        }
        Ok(net)
    }

    fn insert_true_edge(&mut self, u: usize, v: usize) -> Result<()> {
        if u >= self.n {
            return Err(Error::NodeOutOfRange { node: u, n: self.n });
        }
        if v >= self.n {
            return Err(Error::NodeOutOfRange { node: v, n: self.n });
        }
        if u == v {
            return Err(Error::GraphFormat(format!("self-loop at node {u}")));
        }
        if !self.true_adj[u].insert(v) {
            return Err(Error::GraphFormat(format!("duplicate edge {u} {v}")));
        }
        self.true_adj[v].insert(u);
        self.true_edge_count += 1;
        Ok(())
    }

    /// Preferential attachment seeded from a small clique. Each arriving node
    /// attaches `m = round(target_avg_degree / 2)` edges to existing nodes
    /// with probability proportional to degree; the result is connected.
    pub fn generate_scale_free(cfg: GraphGenConfig) -> Result<Self> {
        cfg.validate()?;
        let m = (cfg.target_avg_degree / 2.0).round() as usize;
        let clique = m + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let mut edges: Vec<(usize, usize)> = Vec::new();
        // Endpoint multiset: each node appears once per incident edge, so
        // uniform sampling from it is degree-proportional.
        let mut endpoints: Vec<usize> = Vec::new();
        for u in 0..clique {
            for v in (u + 1)..clique {
                edges.push((u, v));
                endpoints.push(u);
                endpoints.push(v);
            }
        }
        for new in clique..cfg.n {
            let mut targets = BTreeSet::new();
            while targets.len() < m {
                let pick = endpoints[rng.gen_range(0..endpoints.len())];
                targets.insert(pick);
            }
            for &t in &targets {
                edges.push((new, t));
                endpoints.push(new);
                endpoints.push(t);
            }
        }
        Self::from_edges(cfg.n, &edges, cfg.seed)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn true_edge_count(&self) -> usize {
        self.true_edge_count
    }

    pub fn known_edge_count(&self) -> usize {
        self.known_edge_count
    }

    pub fn is_explored(&self, k: usize) -> bool {
        self.explored[k]
    }

    pub fn is_removed(&self, k: usize) -> bool {
        self.removed[k]
    }

    pub fn removed_mask(&self) -> &[bool] {
        &self.removed
    }

    pub fn explored_count(&self) -> usize {
        self.explored.iter().filter(|&&e| e).count()
    }

    /// Ground-truth neighbors of `k`, ascending. The simulator spreads on
    /// these; decision modules must not look at them.
    pub fn true_neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.true_adj[k].iter().copied()
    }

    pub fn true_degree(&self, k: usize) -> usize {
        self.true_adj[k].len()
    }

    /// All ground-truth edges as (u, v) with u < v, sorted.
    pub fn true_edges(&self) -> Vec<(usize, usize)> {
        self.edges_of(&self.true_adj)
    }

    /// All discovered edges as (u, v) with u < v, sorted.
    pub fn known_edges(&self) -> Vec<(usize, usize)> {
        self.edges_of(&self.known_adj)
    }

    fn edges_of(&self, adj: &[BTreeSet<usize>]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for &v in adj[u].range(u + 1..) {
                out.push((u, v));
            }
        }
        out
    }

    /// Known neighbors of `k` regardless of removal state, ascending.
    pub fn known_neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.known_adj[k].iter().copied()
    }

    /// Reveal every true edge incident to `k` and mark it explored. Returns
    /// the newly revealed edges; re-exploring an explored node reveals none.
    pub fn explore_node_edges(&mut self, k: usize) -> Result<Vec<(usize, usize)>> {
        if k >= self.n {
            return Err(Error::NodeOutOfRange { node: k, n: self.n });
        }
        let mut new_edges = Vec::new();
        let neighbors: Vec<usize> = self.true_adj[k].iter().copied().collect();
        for v in neighbors {
            if self.known_adj[k].insert(v) {
                self.known_adj[v].insert(k);
                self.known_edge_count += 1;
                new_edges.push(if k < v { (k, v) } else { (v, k) });
            }
        }
        self.explored[k] = true;
        Ok(new_edges)
    }

    /// Reveal every true edge incident to `k`; returns how many were new.
    pub fn explore_node(&mut self, k: usize) -> Result<usize> {
        Ok(self.explore_node_edges(k)?.len())
    }

    /// Move a uniformly sampled round(p_r * |true_edges|) subset of the true
    /// edges into the known set. Intended for episode start, before any
    /// exploration.
    pub fn reveal_fraction(&mut self, p_r: f64, seed: u64) -> Result<usize> {
        if !(0.0..=1.0).contains(&p_r) {
            return Err(Error::Config(format!("p_r must be in [0, 1], got {p_r}")));
        }
        let all = self.true_edges();
        let k = (p_r * all.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut revealed = 0;
        for idx in sample(&mut rng, all.len(), k) {
            let (u, v) = all[idx];
            if self.known_adj[u].insert(v) {
                self.known_adj[v].insert(u);
                self.known_edge_count += 1;
                revealed += 1;
            }
        }
        Ok(revealed)
    }

    /// Quarantine `k`: mask all its links, known and unknown.
    pub fn remove_node(&mut self, k: usize) -> Result<()> {
        if k >= self.n {
            return Err(Error::NodeOutOfRange { node: k, n: self.n });
        }
        if self.removed[k] {
            return Err(Error::AlreadyRemoved(k));
        }
        self.removed[k] = true;
        Ok(())
    }

    /// Reconnect `k`: all its previous links come back untouched.
    pub fn restore_node(&mut self, k: usize) -> Result<()> {
        if k >= self.n {
            return Err(Error::NodeOutOfRange { node: k, n: self.n });
        }
        if !self.removed[k] {
            return Err(Error::NotRemoved(k));
        }
        self.removed[k] = false;
        Ok(())
    }

    /// Degree of `k` in the active observable graph (0 if `k` is removed).
    pub fn observable_degree(&self, k: usize) -> usize {
        if self.removed[k] {
            return 0;
        }
        self.known_adj[k].iter().filter(|&&v| !self.removed[v]).count()
    }

    /// Known edges with both endpoints active, as (u, v) with u < v, sorted.
    pub fn active_known_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            if self.removed[u] {
                continue;
            }
            for &v in self.known_adj[u].range(u + 1..) {
                if !self.removed[v] {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Known neighbor lists restricted to active nodes (removed nodes get
    /// empty rows), ascending within each row.
    pub fn active_known_neighbors(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n];
        for u in 0..self.n {
            if self.removed[u] {
                continue;
            }
            rows[u] = self.known_adj[u]
                .iter()
                .copied()
                .filter(|&v| !self.removed[v])
                .collect();
        }
        rows
    }

    /// The symmetric 0/1 matrix G^t: entry (i, j) = 1 iff {i, j} is known and
    /// neither endpoint is removed.
    pub fn active_observable_adjacency<F: Scalar>(&self) -> Array2<F> {
        let mut g = Array2::zeros((self.n, self.n));
        for (u, v) in self.active_known_edges() {
            g[(u, v)] = F::one();
            g[(v, u)] = F::one();
        }
        g
    }

    /// Write the edge-list format: header `n=<N> seed=<seed>`, then one
    /// `u v` line per true edge with u < v.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n={} seed={}", self.n, self.seed)?;
        for (u, v) in self.true_edges() {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    /// Parse the edge-list format. Disconnected graphs are accepted.
    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::GraphFormat("empty file".into()))??;
        let mut n = None;
        let mut seed = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("n=") {
                n = Some(v.parse::<usize>().map_err(|_| {
                    Error::GraphFormat(format!("bad node count in header: {tok}"))
                })?);
            } else if let Some(v) = tok.strip_prefix("seed=") {
                seed = Some(v.parse::<u64>().map_err(|_| {
                    Error::GraphFormat(format!("bad seed in header: {tok}"))
                })?);
            }
        }
        let n = n.ok_or_else(|| Error::GraphFormat("header missing n=<N>".into()))?;
        let seed = seed.ok_or_else(|| Error::GraphFormat("header missing seed=<seed>".into()))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|t| t.parse().ok()).ok_or_else(|| {
                    Error::GraphFormat(format!("line {}: expected `u v`", lineno + 2))
                })
            };
            let u = parse(it.next())?;
            let v = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::GraphFormat(format!(
                    "line {}: trailing tokens",
                    lineno + 2
                )));
            }
            edges.push((u, v));
        }
        Self::from_edges(n, &edges, seed)
    }

    /// Cheap structural check used by tests and the episode loop in debug
    /// builds: every known edge must be a true edge, and explored nodes must
    /// have all incident edges known.
    pub fn check_invariants(&self) -> Result<()> {
        for u in 0..self.n {
            for &v in &self.known_adj[u] {
                if !self.true_adj[u].contains(&v) {
                    return Err(Error::GraphFormat(format!(
                        "known edge {u} {v} is not a true edge"
                    )));
                }
            }
            if self.explored[u] && !self.true_adj[u].is_subset(&self.known_adj[u]) {
                return Err(Error::GraphFormat(format!(
                    "explored node {u} has unknown incident edges"
                )));
            }
        }
        Ok(())
    }
}
