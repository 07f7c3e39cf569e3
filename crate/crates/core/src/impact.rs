//! Monte-Carlo estimate of the population reached by complete cascades.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TreeParams;
use crate::rng::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpactError {
    #[error("stratum {0:?} has an empty group-size sample")]
    EmptySizes(String),
    #[error("stratum {0:?} has no parameters")]
    NoParams(String),
    #[error("replicates must be at least 1")]
    NoReplicates,
    #[error("generated tree exceeds {0} nodes")]
    TooLarge(u64),
    #[error("histogram needs at least one bin and one sample")]
    EmptyHistogram,
}

/// Largest tree the generator will build.
pub const MAX_NODES: u64 = 1 << 40;

/// Node count per level of one random tree. Depth is `⌊h⌋` plus a
/// Bernoulli(`h - ⌊h⌋`) extra level; every non-bottom node gets `⌊b⌋` plus a
/// Bernoulli(`b - ⌊b⌋`) extra child.
pub fn generate_levels<R: Rng>(params: TreeParams, rng: &mut R) -> Result<Vec<u64>, ImpactError> {
    let (b, h) = (params.b(), params.h());
    let (b_int, b_frac) = (b.floor() as u64, b - b.floor());
    let depth = h.floor() as u64 + u64::from(rng.random::<f64>() < h - h.floor());
    let mut levels = vec![1u64];
    let mut total = 1u64;
    for _ in 0..depth {
        let parents = *levels.last().expect("root level");
        let extra = if b_frac > 0.0 {
            Binomial::new(parents, b_frac).expect("valid binomial").sample(rng)
        } else {
            0
        };
        let count = parents
            .checked_mul(b_int)
            .and_then(|c| c.checked_add(extra))
            .filter(|c| total.saturating_add(*c) <= MAX_NODES)
            .ok_or(ImpactError::TooLarge(MAX_NODES))?;
        total += count;
        levels.push(count);
    }
    Ok(levels)
}

pub fn generate_tree<R: Rng>(params: TreeParams, rng: &mut R) -> Result<u64, ImpactError> {
    Ok(generate_levels(params, rng)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamsSource {
    /// One parameter pair for every replicate.
    Mean(TreeParams),
    /// Each replicate draws one of these uniformly.
    PerCascade(Vec<TreeParams>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumInput {
    pub stratum: String,
    pub params: ParamsSource,
    pub sizes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactConfig {
    pub replicates: usize,
    pub seed: u64,
    pub strata: Vec<StratumInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachDistribution {
    pub stratum: String,
    pub samples: Vec<u64>,
    pub mean: f64,
}

/// Reach samples per stratum, in input order. Each replicate builds a tree
/// and sums one size drawn with replacement per node; overlapping
/// memberships are not de-duplicated. Streams are keyed by stratum name,
/// so a stratum's samples do not depend on which others are present.
pub fn estimate_reach(config: &ImpactConfig) -> Result<Vec<ReachDistribution>, ImpactError> {
    if config.replicates == 0 {
        return Err(ImpactError::NoReplicates);
    }
    config
        .strata
        .iter()
        .map(|s| {
            if s.sizes.is_empty() {
                return Err(ImpactError::EmptySizes(s.stratum.clone()));
            }
            if matches!(&s.params, ParamsSource::PerCascade(v) if v.is_empty()) {
                return Err(ImpactError::NoParams(s.stratum.clone()));
            }
            let stream = format!("reach/{}", s.stratum);
            let samples = (0..config.replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream_rng(config.seed, &stream, r as u64);
                    let params = match &s.params {
                        ParamsSource::Mean(p) => *p,
                        ParamsSource::PerCascade(v) => v[rng.random_range(0..v.len())],
                    };
                    let n = generate_tree(params, &mut rng)?;
                    Ok((0..n).map(|_| s.sizes[rng.random_range(0..s.sizes.len())]).sum())
                })
                .collect::<Result<Vec<u64>, ImpactError>>()?;
            let mean = samples.iter().map(|&x| x as f64).sum::<f64>() / samples.len() as f64;
            Ok(ReachDistribution {
                stratum: s.stratum.clone(),
                samples,
                mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(samples: &[u64], bins: usize) -> Result<Vec<Bin>, ImpactError> {
    if bins == 0 || samples.is_empty() {
        return Err(ImpactError::EmptyHistogram);
    }
    let lo = *samples.iter().min().expect("non-empty") as f64;
    let hi = *samples.iter().max().expect("non-empty") as f64;
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &s in samples {
        let i = (((s as f64 - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    Ok(out)
}
