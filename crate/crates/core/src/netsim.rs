//! Synthetic diffusion on an Erdős–Rényi contact network with fixed
//! exponential edge delays and delay-dependent transmission.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Adoption, Cascade, CascadeLabels};
use crate::model::{GroupId, MessageId, TreeParams};
use crate::rng::stream_rng;
use crate::treefit::StatVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no internal nodes: every cascade has size 1")]
    NoInternalNodes,
    #[error("edge ({0}, {1}) is invalid")]
    InvalidEdge(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub edge_prob: f64,
    /// Rate of the exponential edge delay.
    pub delay_rate: f64,
    /// Transmission probability at zero delay.
    pub trans_scale: f64,
    /// Delay scale of the transmission decay.
    pub trans_decay: f64,
    pub max_duration: f64,
    pub n_cascades: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.n_nodes == 0 || self.n_nodes > u32::MAX as usize {
            return bad("n_nodes must be positive and fit in 32 bits");
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return bad("edge_prob must lie in (0, 1]");
        }
        if !(self.delay_rate > 0.0 && self.delay_rate.is_finite()) {
            return bad("delay_rate must be positive");
        }
        if !(self.trans_scale > 0.0 && self.trans_scale <= 1.0) {
            return bad("trans_scale must lie in (0, 1]");
        }
        if !(self.trans_decay > 0.0) {
            return bad("trans_decay must be positive");
        }
        if !(self.max_duration > 0.0) {
            return bad("max_duration must be positive");
        }
        if self.n_cascades == 0 {
            return bad("n_cascades must be positive");
        }
        Ok(())
    }

    /// Per-edge transmission probability for delay `delta`.
    pub fn transmission_prob(&self, delta: f64) -> f64 {
        self.trans_scale * (-delta / self.trans_decay).exp()
    }
}

/// Undirected graph; each edge carries one delay shared by both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactNetwork {
    adj: Vec<Vec<(u32, f64)>>,
    n_edges: usize,
}

impl ContactNetwork {
    pub fn from_edges(n: usize, edges: &[(u32, u32, f64)]) -> Result<Self, SimError> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v, d) in edges {
            if u == v || u as usize >= n || v as usize >= n || !(d > 0.0) {
                return Err(SimError::InvalidEdge(u, v));
            }
            adj[u as usize].push((v, d));
            adj[v as usize].push((u, d));
        }
        for a in &mut adj {
            a.sort_by_key(|&(v, _)| v);
        }
        Ok(Self {
            adj,
            n_edges: edges.len(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn neighbors(&self, u: u32) -> &[(u32, f64)] {
        &self.adj[u as usize]
    }

    pub fn delay(&self, u: u32, v: u32) -> Option<f64> {
        self.adj[u as usize].iter().find(|(w, _)| *w == v).map(|&(_, d)| d)
    }
}

pub fn generate_network(config: &SimConfig) -> Result<ContactNetwork, SimError> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, "network", 0);
    let delay = Exp::new(config.delay_rate).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let n = config.n_nodes as u32;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < config.edge_prob {
                // Exp can return exactly 0 only with negligible probability
                let d: f64 = delay.sample(&mut rng);
                edges.push((u, v, d.max(f64::MIN_POSITIVE)));
            }
        }
    }
    ContactNetwork::from_edges(config.n_nodes, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Infection {
    pub node: u32,
    pub time: f64,
    pub parent: Option<u32>,
}

/// Ground-truth cascade; infections in time order, root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCascade {
    pub root: u32,
    pub infections: Vec<Infection>,
}

impl TrueCascade {
    pub fn len(&self) -> usize {
        self.infections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infections.is_empty()
    }

    /// Levels in the true tree, aligned with `infections`.
    pub fn levels(&self) -> Vec<usize> {
        let index: std::collections::HashMap<u32, usize> =
            self.infections.iter().enumerate().map(|(i, inf)| (inf.node, i)).collect();
        let mut level = vec![0; self.len()];
        for (i, inf) in self.infections.iter().enumerate() {
            if let Some(p) = inf.parent {
                level[i] = level[index[&p]] + 1;
            }
        }
        level
    }

    /// Mean child count over internal nodes, and tree height. `None` for a
    /// lone root.
    pub fn shape(&self) -> Option<(f64, usize)> {
        if self.len() < 2 {
            return None;
        }
        let mut children: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
        for inf in &self.infections {
            if let Some(p) = inf.parent {
                *children.entry(p).or_default() += 1;
            }
        }
        let b = children.values().sum::<usize>() as f64 / children.len() as f64;
        let h = self.levels().into_iter().max().unwrap_or(0);
        Some((b, h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    time: f64,
    node: u32,
    parent: Option<u32>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // min-heap on (time, node)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.parent.cmp(&self.parent))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Independent-cascade run from `root`. Each edge out of a newly infected
/// node fires once with the delay-dependent probability; a node takes the
/// time and parent of its earliest successful transmitter. Arrivals after
/// `max_duration` are dropped.
pub fn simulate_cascade<R: Rng>(net: &ContactNetwork, config: &SimConfig, root: u32, rng: &mut R) -> TrueCascade {
    let n = net.n_nodes();
    let mut best = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut infections = Vec::new();
    best[root as usize] = 0.0;
    heap.push(Candidate {
        time: 0.0,
        node: root,
        parent: None,
    });
    while let Some(c) = heap.pop() {
        if done[c.node as usize] {
            continue;
        }
        done[c.node as usize] = true;
        infections.push(Infection {
            node: c.node,
            time: c.time,
            parent: c.parent,
        });
        for &(v, d) in net.neighbors(c.node) {
            if done[v as usize] {
                continue;
            }
            if rng.random::<f64>() < config.transmission_prob(d) {
                let t = c.time + d;
                if t <= config.max_duration && t < best[v as usize] {
                    best[v as usize] = t;
                    heap.push(Candidate {
                        time: t,
                        node: v,
                        parent: Some(c.node),
                    });
                }
            }
        }
    }
    TrueCascade { root, infections }
}

/// `config.n_cascades` runs from uniformly drawn roots; cascade `i` uses its
/// own derived stream, so the result is independent of thread count.
pub fn simulate_cascades(net: &ContactNetwork, config: &SimConfig) -> Vec<TrueCascade> {
    (0..config.n_cascades)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, "cascade", i as u64);
            let root = rng.random_range(0..net.n_nodes() as u32);
            simulate_cascade(net, config, root, &mut rng)
        })
        .collect()
}

/// Ground-truth `(b, h)`: per-cascade mean child count of internal nodes
/// and height, averaged over cascades with at least one edge.
pub fn true_params(cascades: &[TrueCascade]) -> Result<TreeParams, SimError> {
    let shapes: Vec<(f64, usize)> = cascades.iter().filter_map(TrueCascade::shape).collect();
    if shapes.is_empty() {
        return Err(SimError::NoInternalNodes);
    }
    let n = shapes.len() as f64;
    let b = shapes.iter().map(|s| s.0).sum::<f64>() / n;
    let h = shapes.iter().map(|s| s.1 as f64).sum::<f64>() / n;
    TreeParams::new(b, h).map_err(|e| SimError::InvalidConfig(e.to_string()))
}

/// Keeps each infection independently with probability `p`; parents are
/// dropped. Returns the kept indices into `cascade.infections`.
pub fn sample_indices<R: Rng>(cascade: &TrueCascade, p: f64, rng: &mut R) -> Vec<usize> {
    (0..cascade.len()).filter(|_| rng.random::<f64>() < p).collect()
}

/// Observed form of a sample: `(group, time)` pairs, possibly empty.
pub fn sample_cascade<R: Rng>(cascade: &TrueCascade, p: f64, rng: &mut R) -> Vec<Adoption> {
    sample_indices(cascade, p, rng)
        .into_iter()
        .map(|i| {
            let inf = cascade.infections[i];
            Adoption {
                group: node_group(inf.node),
                time: inf.time,
            }
        })
        .collect()
}

/// Group id used for simulated node `u`; zero-padded so lexicographic and
/// numeric order agree.
pub fn node_group(u: u32) -> GroupId {
    GroupId::new(format!("g{u:07}")).expect("non-empty")
}

/// Wraps a sample as a cascade; `None` when fewer than two groups were kept.
pub fn observed_cascade(message: &str, adoptions: Vec<Adoption>, labels: CascadeLabels) -> Option<Cascade> {
    if adoptions.len() < 2 {
        return None;
    }
    let message = MessageId::new(message).ok()?;
    Cascade::new(message, adoptions, labels).ok()
}

/// Statistics of the kept nodes measured on the true tree: kept nodes,
/// kept parent/child pairs, kept nodes with no kept neighbour, and the
/// deepest kept level. Diagnostic only; not observable from timestamps.
pub fn true_sample_stats(cascade: &TrueCascade, kept: &[usize]) -> StatVector {
    let levels = cascade.levels();
    let index: std::collections::HashMap<u32, usize> =
        cascade.infections.iter().enumerate().map(|(i, inf)| (inf.node, i)).collect();
    let mut keep = vec![false; cascade.len()];
    for &i in kept {
        keep[i] = true;
    }
    let mut has_nbr = vec![false; cascade.len()];
    let mut edges = 0usize;
    for &i in kept {
        if let Some(p) = cascade.infections[i].parent {
            let pi = index[&p];
            if keep[pi] {
                edges += 1;
                has_nbr[i] = true;
                has_nbr[pi] = true;
            }
        }
    }
    StatVector {
        nodes: kept.len() as f64,
        edges: edges as f64,
        isolated: kept.iter().filter(|&&i| !has_nbr[i]).count() as f64,
        max_level: kept.iter().map(|&i| levels[i]).max().unwrap_or(0) as f64,
    }
}
