//! One-sided rank-sum tests, OLS with categorical predictors and group-size
//! summaries.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::ingest::{Cascade, GroupCatalog};
use crate::model::{ContentType, ForwardingBucket, GroupId, Modality};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("rank-sum test needs non-empty samples (got {0} and {1})")]
    EmptySample(usize, usize),
    #[error("sample contains NaN")]
    NanValue,
    #[error("regression needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("design matrix is rank deficient; collinear terms: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("groups missing from catalog: {}", .0.join(", "))]
    MissingGroups(Vec<String>),
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSumMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Rank sum of `x` in the pooled sample (midranks for ties).
    pub statistic: f64,
    pub p_value: f64,
    pub method: RankSumMethod,
    pub n_x: usize,
    pub n_y: usize,
}

pub const EXACT_THRESHOLD: usize = 12;
pub const CONTINUITY: f64 = 0.5;

/// Midranks of `values` (1-based) and the tie-group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// One-sided test of "x stochastically greater than y".
pub fn rank_sum_test(x: &[f64], y: &[f64]) -> Result<RankSumResult, StatsError> {
    rank_sum_test_with(x, y, EXACT_THRESHOLD)
}

pub fn rank_sum_test_with(x: &[f64], y: &[f64], exact_threshold: usize) -> Result<RankSumResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(StatsError::NanValue);
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let w: f64 = ranks[..x.len()].iter().sum();
    let n = pooled.len();
    let (p_value, method) = if n <= exact_threshold {
        (exact_upper_tail(&ranks, x.len(), w), RankSumMethod::Exact)
    } else {
        (normal_upper_tail(x.len(), y.len(), &ties, w), RankSumMethod::NormalApprox)
    };
    Ok(RankSumResult {
        statistic: w,
        p_value: p_value.clamp(0.0, 1.0),
        method,
        n_x: x.len(),
        n_y: y.len(),
    })
}

/// P(W >= w) over all equally likely ways of drawing `k` of the pooled ranks.
fn exact_upper_tail(ranks: &[f64], k: usize, w: f64) -> f64 {
    // doubled midranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled sum s
    let mut counts = vec![vec![0f64; max_sum + 1]; k + 1];
    counts[0][0] = 1.0;
    for &d in &doubled {
        for j in (1..=k).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let (src, dst) = (&lower[j - 1], &mut upper[0]);
            for s in (d..=max_sum).rev() {
                dst[s] += src[s - d];
            }
        }
    }
    let target = (2.0 * w).round() as usize;
    let total: f64 = counts[k].iter().sum();
    let tail: f64 = counts[k][target..].iter().sum();
    tail / total
}

fn normal_upper_tail(nx: usize, ny: usize, ties: &[usize], w: f64) -> f64 {
    let (nx, ny) = (nx as f64, ny as f64);
    let n = nx + ny;
    let mean = nx * (n + 1.0) / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = nx * ny / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w - mean - CONTINUITY) / var.sqrt();
    Normal::standard().sf(z)
}

/// One regression observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub response: f64,
    pub forwarding: ForwardingBucket,
    pub modality: Modality,
    pub content: ContentType,
}

pub const REFERENCE_FORWARDING: ForwardingBucket = ForwardingBucket::Zero;
pub const REFERENCE_MODALITY: Modality = Modality::Text;
pub const REFERENCE_CONTENT: ContentType = ContentType::ViralNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    StudentT,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub response: String,
    pub terms: Vec<TermEstimate>,
    pub reference_levels: BTreeMap<String, String>,
    pub n: usize,
    pub df: usize,
    pub p_method: PValueMethod,
}

impl RegressionResult {
    pub fn term(&self, name: &str) -> Option<&TermEstimate> {
        self.terms.iter().find(|t| t.term == name)
    }
}

pub const T_TO_NORMAL_DF: usize = 200;

/// OLS with treatment-coded factors. Only levels present in the data get a
/// column; a factor whose usual reference level is absent uses its first
/// observed level instead. Rows are put in a canonical order first so the result does not
/// depend on input order, bit for bit.
pub fn ols_regression(rows: &[RegressionRow], response_name: &str) -> Result<RegressionResult, StatsError> {
    if rows.len() < 2 {
        return Err(StatsError::TooFewRows(rows.len()));
    }
    if rows.iter().any(|r| r.response.is_nan()) {
        return Err(StatsError::NanValue);
    }
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        (a.forwarding, a.modality, a.content)
            .cmp(&(b.forwarding, b.modality, b.content))
            .then(a.response.total_cmp(&b.response))
    });

    let fw: BTreeSet<ForwardingBucket> = rows.iter().map(|r| r.forwarding).collect();
    let md: BTreeSet<Modality> = rows.iter().map(|r| r.modality).collect();
    let ct: BTreeSet<ContentType> = rows.iter().map(|r| r.content).collect();

    let ref_fw = reference_level(REFERENCE_FORWARDING, &fw);
    let ref_md = reference_level(REFERENCE_MODALITY, &md);
    let ref_ct = reference_level(REFERENCE_CONTENT, &ct);

    type Indicator = Box<dyn Fn(&RegressionRow) -> bool>;
    let mut names = vec!["(intercept)".to_string()];
    let mut columns: Vec<Indicator> = vec![Box::new(|_| true)];
    for level in ForwardingBucket::ALL.into_iter().filter(|l| *l != ref_fw && fw.contains(l)) {
        names.push(format!("forwarding_score={}", level.as_str()));
        columns.push(Box::new(move |r| r.forwarding == level));
    }
    for level in Modality::ALL.into_iter().filter(|l| *l != ref_md && md.contains(l)) {
        names.push(format!("modality={}", level.as_str()));
        columns.push(Box::new(move |r| r.modality == level));
    }
    for level in ContentType::ALL.into_iter().filter(|l| *l != ref_ct && ct.contains(l)) {
        names.push(format!("content_type={}", level.as_str()));
        columns.push(Box::new(move |r| r.content == level));
    }

    let n = rows.len();
    let k = columns.len();
    let x = DMatrix::from_fn(n, k, |i, j| if columns[j](&rows[i]) { 1.0 } else { 0.0 });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.response));

    let dependent = collinear_columns(&x);
    if !dependent.is_empty() {
        return Err(StatsError::RankDeficient(dependent.into_iter().map(|j| names[j].clone()).collect()));
    }

    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| StatsError::RankDeficient(names.clone()))?;
    let beta = chol.solve(&xty);
    let resid = &y - &x * &beta;
    let rss: f64 = resid.iter().map(|e| e * e).sum();
    let df = n - k;
    let sigma2 = if df > 0 { rss / df as f64 } else { f64::NAN };
    let inv = chol.inverse();

    let p_method = if df > T_TO_NORMAL_DF {
        PValueMethod::Normal
    } else {
        PValueMethod::StudentT
    };
    let two_sided = |t: f64| -> f64 {
        let tail = match p_method {
            PValueMethod::Normal => Normal::standard().sf(t.abs()),
            PValueMethod::StudentT => StudentsT::new(0.0, 1.0, df as f64)
                .map(|d| d.sf(t.abs()))
                .unwrap_or(f64::NAN),
        };
        (2.0 * tail).min(1.0)
    };

    let terms = (0..k)
        .map(|j| {
            let var = sigma2 * inv[(j, j)];
            let se = if var < 0.0 { 0.0 } else { var.sqrt() };
            let est = beta[j];
            let p_value = if se.is_nan() {
                f64::NAN
            } else if se == 0.0 {
                if est == 0.0 { 1.0 } else { 0.0 }
            } else {
                two_sided(est / se)
            };
            TermEstimate {
                term: names[j].clone(),
                estimate: est,
                se,
                p_value,
            }
        })
        .collect();

    let reference_levels = BTreeMap::from([
        ("forwarding_score".to_string(), ref_fw.as_str().to_string()),
        ("modality".to_string(), ref_md.as_str().to_string()),
        ("content_type".to_string(), ref_ct.as_str().to_string()),
    ]);
    Ok(RegressionResult {
        response: response_name.to_string(),
        terms,
        reference_levels,
        n,
        df,
        p_method,
    })
}

/// The preferred reference, or the smallest observed level when the data
/// lack it.
fn reference_level<T: Copy + Ord>(preferred: T, present: &BTreeSet<T>) -> T {
    if present.contains(&preferred) {
        preferred
    } else {
        *present.iter().next().expect("at least one row")
    }
}

/// Columns that are (numerically) linear combinations of earlier ones,
/// found by modified Gram-Schmidt.
fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let original = x.column(j).into_owned();
        let scale = original.norm();
        let mut v = original;
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let norm = v.norm();
        if scale == 0.0 || norm <= 1e-9 * scale {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSizeSummary {
    pub stratum: String,
    /// One entry per (cascade, group) traversal.
    pub sizes: Vec<u64>,
    /// 5th, 25th, 50th, 75th and 95th percentiles.
    pub quantiles: [f64; 5],
}

pub const SIZE_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Group sizes traversed by the cascades of each stratum.
pub fn group_size_distribution(
    cascades: &[(String, &Cascade)],
    catalog: &GroupCatalog,
) -> Result<Vec<GroupSizeSummary>, StatsError> {
    let mut missing: BTreeSet<&GroupId> = BTreeSet::new();
    let mut by_stratum: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for (key, c) in cascades {
        let sizes = by_stratum.entry(key).or_default();
        for a in c.adoptions() {
            match catalog.size_of(&a.group) {
                Some(s) => sizes.push(s),
                None => {
                    missing.insert(&a.group);
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(StatsError::MissingGroups(missing.into_iter().map(|g| g.to_string()).collect()));
    }
    Ok(by_stratum
        .into_iter()
        .map(|(key, sizes)| {
            let mut sorted: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
            sorted.sort_by(f64::total_cmp);
            GroupSizeSummary {
                stratum: key.to_string(),
                quantiles: SIZE_QUANTILES.map(|q| quantile_sorted(&sorted, q)),
                sizes,
            }
        })
        .collect())
}
