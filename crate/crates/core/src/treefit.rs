//! Fitting `(b, h)` of the complete cascade tree from statistics of a
//! sparsely observed cascade.
//!
//! The model tree is complete `b`-ary of depth `h`, each node observed
//! independently with probability `p`. Matched statistics: observed nodes,
//! observed parent/child pairs, observed nodes with no observed neighbour,
//! and the deepest observed level.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{geometric_sum, interpolate_depth, TreeParams};
use crate::reconstruct::CascadeStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("sampling probability must lie in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("cascade too small to fit")]
    TooSmall,
    #[error("invalid search space: {0}")]
    InvalidSearch(String),
    #[error("objective is not finite anywhere on the grid")]
    NonFinite,
}

/// Expected statistics of the sampled tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledTreeExpectations {
    pub e_nodes: f64,
    pub e_edges: f64,
    pub e_isolated: f64,
    pub e_maxlevel: f64,
}

impl SampledTreeExpectations {
    pub fn as_array(&self) -> [f64; 4] {
        [self.e_nodes, self.e_edges, self.e_isolated, self.e_maxlevel]
    }
}

pub fn check_rate(p: f64) -> Result<f64, FitError> {
    if p > 0.0 && p <= 1.0 {
        Ok(p)
    } else {
        Err(FitError::InvalidRate(p))
    }
}

/// Per-depth pieces that depend only on `p`.
#[derive(Debug, Clone, Copy)]
struct Rate {
    p: f64,
    /// ln(1 - p); `-inf` at p = 1.
    ln_q: f64,
}

impl Rate {
    fn new(p: f64) -> Self {
        Self {
            p,
            ln_q: (-p).ln_1p(),
        }
    }

    /// (1 - p)^x for x >= 0, with 0^0 = 1.
    fn q_pow(&self, x: f64) -> f64 {
        if x == 0.0 {
            1.0
        } else {
            (x * self.ln_q).exp()
        }
    }

    fn isolated(&self, b: f64, depth: u32) -> f64 {
        let p = self.p;
        if depth == 0 {
            return p;
        }
        let interior = geometric_sum(b, depth - 1) - 1.0;
        p * self.q_pow(b) + interior * p * self.q_pow(b + 1.0) + b.powi(depth as i32) * p * self.q_pow(1.0)
    }

    /// E[max(L, 0)] where L is the deepest sampled level (-1 if none).
    fn max_level(&self, b: f64, depth: u32) -> f64 {
        let total = geometric_sum(b, depth);
        let mut sum = 0.0;
        for d in 1..=depth {
            let below = total - geometric_sum(b, d - 1);
            // 1 - (1-p)^below, accurate for tiny p
            sum += if self.ln_q.is_infinite() {
                1.0
            } else {
                -(below * self.ln_q).exp_m1()
            };
        }
        sum
    }
}

/// Closed-form expectations under `Γ(p, b, h)`; fractional `h` interpolates
/// between the bracketing integer depths.
pub fn expectations(p: f64, params: TreeParams) -> Result<SampledTreeExpectations, FitError> {
    let rate = Rate::new(check_rate(p)?);
    Ok(expectations_at(rate, params))
}

fn expectations_at(rate: Rate, params: TreeParams) -> SampledTreeExpectations {
    let b = params.b();
    let p = rate.p;
    let n = interpolate_depth(params, |d| geometric_sum(b, d));
    SampledTreeExpectations {
        e_nodes: p * n,
        e_edges: p * p * (n - 1.0),
        e_isolated: interpolate_depth(params, |d| rate.isolated(b, d)),
        e_maxlevel: interpolate_depth(params, |d| rate.max_level(b, d)),
    }
}

/// Observed statistics in the order matched by the fitter. Real-valued so
/// that averaged or analytic statistics can be fitted too.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatVector {
    pub nodes: f64,
    pub edges: f64,
    pub isolated: f64,
    pub max_level: f64,
}

impl StatVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.nodes, self.edges, self.isolated, self.max_level]
    }
}

impl From<&CascadeStats> for StatVector {
    fn from(s: &CascadeStats) -> Self {
        Self {
            nodes: s.n_nodes as f64,
            edges: s.n_edges as f64,
            isolated: s.n_isolated as f64,
            max_level: s.max_level as f64,
        }
    }
}

impl From<SampledTreeExpectations> for StatVector {
    fn from(e: SampledTreeExpectations) -> Self {
        Self {
            nodes: e.e_nodes,
            edges: e.e_edges,
            isolated: e.e_isolated,
            max_level: e.e_maxlevel,
        }
    }
}

pub const STAT_NAMES: [&str; 4] = ["nodes", "edges", "isolated", "max_level"];

/// Coarse grid bounds and steps, refined once around the coarse optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub h_step: f64,
    /// Refinement grid is `refine_factor` times finer than the coarse one.
    pub refine_factor: u32,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            b_min: 1.05,
            b_max: 16.0,
            b_step: 0.05,
            h_min: 1.0,
            h_max: 24.0,
            h_step: 0.25,
            refine_factor: 10,
        }
    }
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    // index-based so grid points are not polluted by accumulated rounding
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidSearch(m.to_string()));
        if !(self.b_min >= 1.0 && self.b_max >= self.b_min && self.b_max.is_finite()) {
            return bad("need 1 <= b_min <= b_max");
        }
        if !(self.h_min >= 0.0 && self.h_max >= self.h_min && self.h_max.is_finite()) {
            return bad("need 0 <= h_min <= h_max");
        }
        if !(self.b_step > 0.0 && self.h_step > 0.0) {
            return bad("steps must be positive");
        }
        if self.refine_factor == 0 {
            return bad("refine_factor must be at least 1");
        }
        Ok(())
    }

    pub fn b_axis(&self) -> Vec<f64> {
        axis(self.b_min, self.b_max, self.b_step)
    }

    pub fn h_axis(&self) -> Vec<f64> {
        axis(self.h_min, self.h_max, self.h_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: TreeParams,
    pub objective: f64,
    /// `(expected - observed) / max(observed, 1)` per matched statistic.
    pub residuals: [f64; 4],
    pub evaluations: usize,
}

fn residuals(e: &SampledTreeExpectations, obs: &StatVector) -> [f64; 4] {
    let e = e.as_array();
    let o = obs.as_array();
    std::array::from_fn(|i| (e[i] - o[i]) / o[i].max(1.0))
}

fn objective(r: &[f64; 4]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Grid fitter for one sampling rate. The coarse-grid expectations are
/// computed once and shared by every fit.
#[derive(Debug, Clone)]
pub struct Fitter {
    rate: Rate,
    search: SearchSpace,
    coarse: Vec<(TreeParams, SampledTreeExpectations)>,
}

impl Fitter {
    pub fn new(p: f64, search: SearchSpace) -> Result<Self, FitError> {
        let rate = Rate::new(check_rate(p)?);
        search.validate()?;
        let hs = search.h_axis();
        let coarse = search
            .b_axis()
            .into_iter()
            .flat_map(|b| hs.iter().map(move |&h| (b, h)))
            .map(|(b, h)| {
                let params = TreeParams::new(b, h).expect("search space validated");
                (params, expectations_at(rate, params))
            })
            .collect();
        Ok(Self {
            rate,
            search,
            coarse,
        })
    }

    pub fn p(&self) -> f64 {
        self.rate.p
    }

    pub fn search(&self) -> &SearchSpace {
        &self.search
    }

    /// Fits a reconstructed cascade.
    pub fn fit(&self, stats: &CascadeStats) -> Result<FitResult, FitError> {
        if stats.n_nodes < 2 {
            return Err(FitError::TooSmall);
        }
        self.fit_vector(&StatVector::from(stats))
    }

    /// Fits an arbitrary statistic vector. Ties keep the first point in
    /// (b, h) scan order.
    pub fn fit_vector(&self, obs: &StatVector) -> Result<FitResult, FitError> {
        let mut best: Option<FitResult> = None;
        let consider = |params: TreeParams, e: &SampledTreeExpectations, best: &mut Option<FitResult>| {
            let r = residuals(e, obs);
            let f = objective(&r);
            if f.is_finite() && best.as_ref().is_none_or(|b| f < b.objective) {
                *best = Some(FitResult {
                    params,
                    objective: f,
                    residuals: r,
                    evaluations: 0,
                });
            }
        };
        for (params, e) in &self.coarse {
            consider(*params, e, &mut best);
        }
        let coarse_best = best.ok_or(FitError::NonFinite)?;

        let s = &self.search;
        let k = f64::from(s.refine_factor);
        let (b0, h0) = (coarse_best.params.b(), coarse_best.params.h());
        let fine_b = refine_axis(b0, s.b_step, k, s.b_min, s.b_max);
        let fine_h = refine_axis(h0, s.h_step, k, s.h_min, s.h_max);
        for &b in &fine_b {
            for &h in &fine_h {
                let params = TreeParams::new(b, h).expect("refinement stays in range");
                consider(params, &expectations_at(self.rate, params), &mut best);
            }
        }
        let mut out = best.expect("coarse optimum present");
        out.evaluations = self.coarse.len() + fine_b.len() * fine_h.len();
        Ok(out)
    }
}

fn refine_axis(centre: f64, step: f64, k: f64, lo: f64, hi: f64) -> Vec<f64> {
    let fine = step / k;
    let n = k as i64;
    (-n..=n)
        .map(|i| centre + i as f64 * fine)
        .filter(|&x| x >= lo - 1e-12 && x <= hi + 1e-12)
        .map(|x| x.clamp(lo, hi))
        .collect()
}

/// One-off fit; builds a throwaway [`Fitter`].
pub fn fit(stats: &CascadeStats, p: f64, search: SearchSpace) -> Result<FitResult, FitError> {
    Fitter::new(p, search)?.fit(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub stratum: String,
    pub mu_b: f64,
    pub sigma_b: f64,
    pub mu_h: f64,
    pub sigma_h: f64,
    pub n: usize,
}

/// Mean and population standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates per-cascade parameters by stratum, in key order.
pub fn summarize_strata<'a, I>(fits: I) -> Vec<StratumSummary>
where
    I: IntoIterator<Item = (&'a str, TreeParams)>,
{
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, params) in fits {
        let g = groups.entry(key).or_default();
        g.0.push(params.b());
        g.1.push(params.h());
    }
    groups
        .into_iter()
        .map(|(key, (bs, hs))| {
            let (mu_b, sigma_b) = mean_sd(&bs);
            let (mu_h, sigma_h) = mean_sd(&hs);
            StratumSummary {
                stratum: key.to_string(),
                mu_b,
                sigma_b,
                mu_h,
                sigma_h,
                n: bs.len(),
            }
        })
        .collect()
}

/// Fits every cascade and aggregates per stratum. Strata where nothing
/// could be fitted are left out with a warning.
pub fn fit_stratified(labelled: &[(String, CascadeStats)], fitter: &Fitter) -> Vec<StratumSummary> {
    let results: Vec<Result<FitResult, FitError>> =
        labelled.par_iter().map(|(_, s)| fitter.fit(s)).collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for ((key, _), r) in labelled.iter().zip(&results) {
        *seen.entry(key).or_default() += usize::from(r.is_ok());
    }
    for (key, n) in &seen {
        if *n == 0 {
            log::warn!("stratum {key:?} has no fittable cascades; omitted");
        }
    }
    summarize_strata(
        labelled
            .iter()
            .zip(&results)
            .filter_map(|((k, _), r)| r.as_ref().ok().map(|f| (k.as_str(), f.params))),
    )
}
