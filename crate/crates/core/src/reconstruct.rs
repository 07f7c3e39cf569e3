//! Diffusion forests from adoption times under an exponential-decay
//! transmission likelihood, plus greedy inference of a shared network.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Cascade, GroupOverlapNetwork};
use crate::model::{GroupId, MessageId};
use crate::stats::quantile_sorted;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("invalid transmission model: {0}")]
    InvalidModel(String),
    #[error("delay must be positive, got {0}")]
    NonPositiveDelay(f64),
    #[error("cannot derive a default decay scale: {0}")]
    NoDelays(&'static str),
    #[error("ccdf of an empty sample")]
    EmptySample,
    #[error("ccdf input contains NaN")]
    NanValue,
    #[error("edge budget must be at least 1")]
    ZeroBudget,
}

/// `w(Δ) = β·exp(-Δ/α)` for an observed parent, `ε` for external influence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionModel {
    alpha: f64,
    beta: f64,
    epsilon: f64,
}

/// Values fixed by the user; the rest come from the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOverrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
}

pub const DEFAULT_BETA: f64 = 0.5;
/// Quantile of the pooled consecutive delays used for the default `ε`.
pub const EPSILON_DELAY_QUANTILE: f64 = 0.99;
pub const EPSILON_SCALE: f64 = 0.1;

impl TransmissionModel {
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Result<Self, ReconstructError> {
        let bad = |m: String| Err(ReconstructError::InvalidModel(m));
        if !(alpha > 0.0 && alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {alpha}"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {beta}"));
        }
        if !(epsilon > 0.0 && epsilon < beta) {
            return bad(format!("epsilon must lie in (0, beta), got {epsilon}"));
        }
        Ok(Self { alpha, beta, epsilon })
    }

    /// Fills unset values: `α` is the mean gap between consecutive
    /// adoptions over all cascades, `β` is 0.5, and `ε` is
    /// `0.1·β·exp(-Δ99/α)` with `Δ99` the 99th percentile of those gaps.
    pub fn resolve(cascades: &[Cascade], o: ModelOverrides) -> Result<Self, ReconstructError> {
        let mut gaps: Vec<f64> = Vec::new();
        if o.alpha.is_none() || o.epsilon.is_none() {
            for c in cascades {
                gaps.extend(c.adoptions().windows(2).map(|w| w[1].time - w[0].time));
            }
            if gaps.is_empty() {
                return Err(ReconstructError::NoDelays("no cascades"));
            }
            gaps.sort_by(f64::total_cmp);
        }
        let alpha = match o.alpha {
            Some(a) => a,
            None => {
                let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
                if mean <= 0.0 {
                    return Err(ReconstructError::NoDelays("all adoption times coincide"));
                }
                mean
            }
        };
        let beta = o.beta.unwrap_or(DEFAULT_BETA);
        let epsilon = match o.epsilon {
            Some(e) => e,
            None => {
                let d99 = quantile_sorted(&gaps, EPSILON_DELAY_QUANTILE);
                EPSILON_SCALE * beta * (-d99 / alpha).exp()
            }
        };
        // a degenerate ε (underflow) would make every node attach internally
        let epsilon = if o.epsilon.is_none() { epsilon.max(f64::MIN_POSITIVE) } else { epsilon };
        Self::new(alpha, beta, epsilon)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn edge_weight(&self, delta: f64) -> Result<f64, ReconstructError> {
        Ok(self.log_edge_weight(delta)?.exp())
    }

    /// `ln w(Δ)`, finite even where `w` underflows.
    pub fn log_edge_weight(&self, delta: f64) -> Result<f64, ReconstructError> {
        if delta > 0.0 {
            Ok(self.beta.ln() - delta / self.alpha)
        } else {
            Err(ReconstructError::NonPositiveDelay(delta))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parent {
    External,
    /// Index into the forest's node list.
    Node(usize),
}

/// Parent links over one cascade's observed groups. Nodes keep the cascade's
/// `(time, group)` order, so every parent index is smaller than its child's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionForest {
    pub message: MessageId,
    nodes: Vec<(GroupId, f64)>,
    parent: Vec<Parent>,
    attach_loglik: Vec<f64>,
}

impl DiffusionForest {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn group(&self, i: usize) -> &GroupId {
        &self.nodes[i].0
    }

    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i].1
    }

    pub fn parent(&self, i: usize) -> Parent {
        self.parent[i]
    }

    pub fn parents(&self) -> &[Parent] {
        &self.parent
    }

    pub fn attach_loglik(&self, i: usize) -> f64 {
        self.attach_loglik[i]
    }

    /// Parent group of `group`, `None` for external influence or an unknown group.
    pub fn parent_of(&self, group: &GroupId) -> Option<&GroupId> {
        let i = self.nodes.iter().position(|(g, _)| g == group)?;
        match self.parent[i] {
            Parent::Node(u) => Some(&self.nodes[u].0),
            Parent::External => None,
        }
    }

    /// Levels with each component root at 0.
    pub fn levels(&self) -> Vec<usize> {
        let mut level = vec![0; self.len()];
        for v in 0..self.len() {
            if let Parent::Node(u) = self.parent[v] {
                level[v] = level[u] + 1;
            }
        }
        level
    }

    /// True when every internal link points strictly back in time.
    pub fn is_time_ordered(&self) -> bool {
        self.parent.iter().enumerate().all(|(v, p)| match *p {
            Parent::Node(u) => u < v && self.nodes[u].1 < self.nodes[v].1,
            Parent::External => true,
        })
    }
}

fn nodes_of(cascade: &Cascade) -> Vec<(GroupId, f64)> {
    cascade
        .adoptions()
        .iter()
        .map(|a| (a.group.clone(), a.time))
        .collect()
}

/// Best strictly-earlier parent of `v` by log weight; equal weights prefer
/// the earlier adopter, then the smaller group id.
fn best_parent(
    nodes: &[(GroupId, f64)],
    v: usize,
    score: impl Fn(usize) -> Option<f64>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for u in 0..v {
        if nodes[u].1 >= nodes[v].1 {
            break;
        }
        let Some(s) = score(u) else { continue };
        let better = match best {
            None => true,
            Some((b, bs)) => {
                s > bs
                    || (s == bs
                        && (nodes[u].1, &nodes[u].0) < (nodes[b].1, &nodes[b].0))
            }
        };
        if better {
            best = Some((u, s));
        }
    }
    best
}

/// Maximum-likelihood parent per node. A node joins external influence
/// when no earlier candidate beats `ε` (equality keeps it external).
pub fn mle_tree(
    cascade: &Cascade,
    model: &TransmissionModel,
    candidates: Option<&GroupOverlapNetwork>,
) -> DiffusionForest {
    let nodes = nodes_of(cascade);
    let ln_eps = model.epsilon.ln();
    let mut parent = Vec::with_capacity(nodes.len());
    let mut attach = Vec::with_capacity(nodes.len());
    for v in 0..nodes.len() {
        let found = best_parent(&nodes, v, |u| {
            if candidates.is_some_and(|net| !net.contains(&nodes[u].0, &nodes[v].0)) {
                return None;
            }
            model.log_edge_weight(nodes[v].1 - nodes[u].1).ok()
        });
        match found {
            Some((u, s)) if s > ln_eps => {
                parent.push(Parent::Node(u));
                attach.push(s);
            }
            _ => {
                parent.push(Parent::External);
                attach.push(ln_eps);
            }
        }
    }
    DiffusionForest {
        message: cascade.message.clone(),
        nodes,
        parent,
        attach_loglik: attach,
    }
}

/// Structure of a reconstructed cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_isolated: usize,
    pub max_level: usize,
    pub depth: usize,
    pub max_breadth: usize,
}

pub fn cascade_stats(forest: &DiffusionForest) -> CascadeStats {
    let n = forest.len();
    let levels = forest.levels();
    let mut has_child = vec![false; n];
    let mut n_edges = 0;
    for p in forest.parents() {
        if let Parent::Node(u) = *p {
            has_child[u] = true;
            n_edges += 1;
        }
    }
    let n_isolated = (0..n)
        .filter(|&v| forest.parent(v) == Parent::External && !has_child[v])
        .count();
    let depth = levels.iter().copied().max().unwrap_or(0);
    let mut per_level = vec![0usize; depth + 1];
    for &l in &levels {
        per_level[l] += 1;
    }
    CascadeStats {
        n_nodes: n,
        n_edges,
        n_isolated,
        max_level: depth,
        depth,
        max_breadth: per_level.into_iter().max().unwrap_or(0),
    }
}

/// `(x, P(X >= x))` over the distinct sorted values.
pub fn ccdf(values: &[f64]) -> Result<Vec<(f64, f64)>, ReconstructError> {
    if values.is_empty() {
        return Err(ReconstructError::EmptySample);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(ReconstructError::NanValue);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        out.push((x, (sorted.len() - i) as f64 / n));
        while i < sorted.len() && sorted[i] == x {
            i += 1;
        }
    }
    Ok(out)
}

/// Network found by greedy edge addition, in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferredNetwork {
    pub edges: Vec<(GroupId, GroupId)>,
    pub gains: Vec<f64>,
    /// Total log-likelihood before any edge and after each insertion.
    pub loglik: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Gain(f64);

impl PartialEq for Gain {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Gain {}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Gain {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct NetState<'a> {
    model: &'a TransmissionModel,
    ln_keep: f64,
    groups: Vec<GroupId>,
    /// Per cascade: (group index, time) in adoption order.
    cascades: Vec<Vec<(usize, f64)>>,
    position: Vec<HashMap<usize, usize>>,
    /// Cascades containing each group, ascending.
    containing: Vec<Vec<usize>>,
    /// Per cascade and node: current likelihood term.
    score: Vec<Vec<f64>>,
    chosen: Vec<Vec<Option<usize>>>,
}

impl NetState<'_> {
    /// Term of node `v` if attached to `u` (must be earlier in the cascade).
    fn attach_term(&self, c: usize, pu: usize, pv: usize) -> Option<f64> {
        let cas = &self.cascades[c];
        let lw = self.model.log_edge_weight(cas[pv].1 - cas[pu].1).ok()?;
        Some(lw - self.ln_keep)
    }

    fn gain(&self, u: usize, v: usize) -> f64 {
        let mut g = 0.0;
        for &c in &self.containing[u] {
            g += self.ln_keep;
            let pos = &self.position[c];
            if let Some(&pv) = pos.get(&v) {
                let pu = pos[&u];
                if let Some(t) = self.attach_term(c, pu, pv) {
                    g += (t - self.score[c][pv]).max(0.0);
                }
            }
        }
        g
    }

    fn insert(&mut self, u: usize, v: usize) {
        for i in 0..self.containing[u].len() {
            let c = self.containing[u][i];
            let pos = &self.position[c];
            let (Some(&pv), pu) = (pos.get(&v), pos[&u]) else { continue };
            if let Some(t) = self.attach_term(c, pu, pv) {
                let cur = self.score[c][pv];
                let better = t > cur
                    || (t == cur
                        && self.chosen[c][pv].is_some_and(|old| {
                            let cas = &self.cascades[c];
                            (cas[pu].1, &self.groups[u]) < (cas[old].1, &self.groups[cas[old].0])
                        }));
                if better {
                    self.score[c][pv] = t;
                    self.chosen[c][pv] = Some(pu);
                }
            }
        }
    }

    fn total(&self, edges_out: &[usize]) -> f64 {
        let mut total = 0.0;
        for (c, cas) in self.cascades.iter().enumerate() {
            let penalty: usize = cas.iter().map(|&(g, _)| edges_out[g]).sum();
            total += self.ln_keep * penalty as f64 + self.score[c].iter().sum::<f64>();
        }
        total
    }
}

/// Greedy network inference. Starting from external influence only, adds
/// the directed edge with the largest total log-likelihood gain until `k`
/// edges are placed or no edge improves the likelihood. Each network edge
/// out of an infected group costs `ln(1-β)` per cascade unless it carries
/// the infection. Ties go to the lexicographically smallest `(u, v)`.
pub fn infer_network(
    cascades: &[Cascade],
    model: &TransmissionModel,
    k: usize,
    candidates: Option<&GroupOverlapNetwork>,
) -> Result<(InferredNetwork, Vec<DiffusionForest>), ReconstructError> {
    if k == 0 {
        return Err(ReconstructError::ZeroBudget);
    }
    let groups: Vec<GroupId> = cascades
        .iter()
        .flat_map(|c| c.adoptions().iter().map(|a| a.group.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&GroupId, usize> = groups.iter().enumerate().map(|(i, g)| (g, i)).collect();
    let cas_idx: Vec<Vec<(usize, f64)>> = cascades
        .iter()
        .map(|c| c.adoptions().iter().map(|a| (index[&a.group], a.time)).collect())
        .collect();
    let position = cas_idx
        .iter()
        .map(|c| c.iter().enumerate().map(|(i, &(g, _))| (g, i)).collect())
        .collect();
    let mut containing = vec![Vec::new(); groups.len()];
    for (c, cas) in cas_idx.iter().enumerate() {
        for &(g, _) in cas {
            containing[g].push(c);
        }
    }
    let ln_eps = model.epsilon.ln();
    let mut state = NetState {
        model,
        ln_keep: (1.0 - model.beta).ln(),
        score: cas_idx.iter().map(|c| vec![ln_eps; c.len()]).collect(),
        chosen: cas_idx.iter().map(|c| vec![None; c.len()]).collect(),
        groups,
        cascades: cas_idx,
        position,
        containing,
    };

    // candidate pairs: u strictly before v in at least one cascade
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for cas in &state.cascades {
        for (j, &(v, tv)) in cas.iter().enumerate() {
            for &(u, tu) in &cas[..j] {
                if tu < tv
                    && candidates.is_none_or(|net| net.contains(&state.groups[u], &state.groups[v]))
                {
                    pairs.insert((u, v));
                }
            }
        }
    }
    let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    let initial: Vec<f64> = pairs.par_iter().map(|&(u, v)| state.gain(u, v)).collect();

    let mut gain_of: HashMap<(usize, usize), f64> = HashMap::with_capacity(pairs.len());
    let mut ranked: BTreeSet<(std::cmp::Reverse<Gain>, usize, usize)> = BTreeSet::new();
    let mut into: Vec<Vec<usize>> = vec![Vec::new(); state.groups.len()];
    for (&(u, v), &g) in pairs.iter().zip(&initial) {
        gain_of.insert((u, v), g);
        ranked.insert((std::cmp::Reverse(Gain(g)), u, v));
        into[v].push(u);
    }

    let mut edges_out = vec![0usize; state.groups.len()];
    let mut net = InferredNetwork {
        edges: Vec::new(),
        gains: Vec::new(),
        loglik: vec![state.total(&edges_out)],
    };
    while net.edges.len() < k {
        let Some(&(std::cmp::Reverse(Gain(g)), u, v)) = ranked.iter().next() else { break };
        if g <= 0.0 {
            break;
        }
        ranked.remove(&(std::cmp::Reverse(Gain(g)), u, v));
        gain_of.remove(&(u, v));
        state.insert(u, v);
        edges_out[u] += 1;
        net.edges.push((state.groups[u].clone(), state.groups[v].clone()));
        net.gains.push(g);
        net.loglik.push(state.total(&edges_out));
        // only edges into v see a changed score
        let stale: Vec<usize> = into[v].iter().copied().filter(|x| gain_of.contains_key(&(*x, v))).collect();
        let fresh: Vec<f64> = stale.par_iter().map(|&x| state.gain(x, v)).collect();
        for (x, g_new) in stale.into_iter().zip(fresh) {
            let old = gain_of.insert((x, v), g_new).expect("present");
            ranked.remove(&(std::cmp::Reverse(Gain(old)), x, v));
            ranked.insert((std::cmp::Reverse(Gain(g_new)), x, v));
        }
    }

    let forests = cascades
        .iter()
        .enumerate()
        .map(|(c, cascade)| {
            let nodes = nodes_of(cascade);
            let parent = state.chosen[c]
                .iter()
                .map(|p| p.map_or(Parent::External, Parent::Node))
                .collect();
            DiffusionForest {
                message: cascade.message.clone(),
                nodes,
                parent,
                attach_loglik: state.score[c].clone(),
            }
        })
        .collect();
    Ok((net, forests))
}

pub fn write_forests_csv<W: Write>(forests: &[DiffusionForest], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["message_id", "child_group", "parent_group", "level"])?;
    for f in forests {
        let levels = f.levels();
        for v in 0..f.len() {
            let parent = match f.parent(v) {
                Parent::Node(u) => f.group(u).as_str(),
                Parent::External => "EXTERNAL",
            };
            w.write_record([
                f.message.as_str(),
                f.group(v).as_str(),
                parent,
                &levels[v].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_stats_csv<W: Write>(rows: &[(MessageId, CascadeStats)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "message_id",
        "n_nodes",
        "n_edges",
        "n_isolated",
        "max_level",
        "depth",
        "max_breadth",
    ])?;
    for (m, s) in rows {
        w.write_record([
            m.as_str().to_string(),
            s.n_nodes.to_string(),
            s.n_edges.to_string(),
            s.n_isolated.to_string(),
            s.max_level.to_string(),
            s.depth.to_string(),
            s.max_breadth.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
