//! End-to-end runs shared by the command-line driver and the tests:
//! synthetic validation and the full analysis of an event file.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact::{self, ImpactConfig, ParamsSource, ReachDistribution, StratumInput};
use crate::ingest::{self, Cascade, CascadeLabels, DropReport, GroupCatalog, GroupOverlapNetwork};
use crate::model::{AdoptionEvent, ContentType, ForwardingBucket, MessageId, Modality, TreeParams};
use crate::netsim::{self, ContactNetwork, SimConfig, TrueCascade};
use crate::reconstruct::{
    self, CascadeStats, DiffusionForest, InferredNetwork, ModelOverrides, TransmissionModel,
};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{self, GroupSizeSummary, RankSumResult, RegressionResult, RegressionRow};
use crate::treefit::{self, FitError, FitResult, Fitter, SearchSpace, StratumSummary};

/// Input problems exit with status 1, numerical failures with 2.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 1,
            PipelineError::Numerical(_) => 2,
        }
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Input(e.to_string())
            }
        }
    )*};
}
input_error!(ingest::IngestError, netsim::SimError, crate::model::ModelError, impact::ImpactError);

impl From<reconstruct::ReconstructError> for PipelineError {
    fn from(e: reconstruct::ReconstructError) -> Self {
        use reconstruct::ReconstructError as E;
        match e {
            E::NoDelays(_) | E::EmptySample | E::NanValue => PipelineError::Numerical(e.to_string()),
            _ => PipelineError::Input(e.to_string()),
        }
    }
}

impl From<FitError> for PipelineError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NonFinite | FitError::TooSmall => PipelineError::Numerical(e.to_string()),
            _ => PipelineError::Input(e.to_string()),
        }
    }
}

impl From<stats::StatsError> for PipelineError {
    fn from(e: stats::StatsError) -> Self {
        match e {
            stats::StatsError::MissingGroups(_) => PipelineError::Input(e.to_string()),
            _ => PipelineError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    MleTree,
    Netinf,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mle-tree" => Ok(Mode::MleTree),
            "netinf" => Ok(Mode::Netinf),
            other => Err(format!("unknown mode {other:?}; expected mle-tree or netinf")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n_nodes: usize,
    pub edge_prob: f64,
    pub delay_rate: f64,
    pub trans_scale: f64,
    pub trans_decay: f64,
}

/// One simulated message type; types differ only in duration cap and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeType {
    pub name: String,
    pub max_duration: f64,
    pub n_cascades: usize,
    #[serde(default = "unlabeled")]
    pub content_type: ContentType,
    #[serde(default = "text")]
    pub modality: Modality,
    #[serde(default)]
    pub forwarding_score: u32,
    /// Overrides the network's transmission probability at zero delay.
    #[serde(default)]
    pub trans_scale: Option<f64>,
}

fn unlabeled() -> ContentType {
    ContentType::Unlabeled
}

fn text() -> Modality {
    Modality::Text
}

/// Calibrated so the default long and short types have true (b, h) near
/// (1.96, 10.4) and (1.92, 6.0).
pub const DEFAULT_NETWORK: NetworkSpec = NetworkSpec {
    n_nodes: 2000,
    edge_prob: 16.0 / 1999.0,
    delay_rate: 1.0,
    trans_scale: 0.9,
    trans_decay: 5.0,
};
pub const DEFAULT_LONG_DURATION: f64 = 0.44;
pub const DEFAULT_SHORT_DURATION: f64 = 0.303;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub network: NetworkSpec,
    pub types: Vec<CascadeType>,
    /// When set, exported events keep each infection with this probability.
    pub sample_rate: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let ty = |name: &str, d: f64| CascadeType {
            name: name.to_string(),
            max_duration: d,
            n_cascades: 100,
            content_type: ContentType::Unlabeled,
            modality: Modality::Text,
            forwarding_score: 0,
            trans_scale: None,
        };
        Self {
            network: DEFAULT_NETWORK,
            types: vec![ty("long", DEFAULT_LONG_DURATION), ty("short", DEFAULT_SHORT_DURATION)],
            sample_rate: None,
        }
    }
}

/// Everything a run can be configured with. Unset fields take defaults and
/// the resolved value is written to the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub p: f64,
    pub search: SearchSpace,
    pub mode: Mode,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    /// Edge budget for network inference; defaults to the number of
    /// adoptions that could have an observed parent.
    pub netinf_budget: Option<usize>,
    pub overlap_network: bool,
    /// Extra stratification keys: a label column name or one of
    /// `content_type`, `modality`, `forwarding_score`.
    pub stratify_by: Vec<String>,
    pub seed: u64,
    pub impact_replicates: usize,
    pub histogram_bins: usize,
    pub rates: Vec<f64>,
    pub simulation: SimulationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            p: 0.02,
            search: SearchSpace::default(),
            mode: Mode::MleTree,
            alpha: None,
            beta: None,
            epsilon: None,
            netinf_budget: None,
            overlap_network: false,
            stratify_by: Vec::new(),
            seed: 2024,
            impact_replicates: 10_000,
            histogram_bins: 50,
            rates: vec![0.02, 0.03, 0.04, 0.05],
            simulation: SimulationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn overrides(&self) -> ModelOverrides {
        ModelOverrides {
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        treefit::check_rate(self.p)?;
        for &r in &self.rates {
            treefit::check_rate(r)?;
        }
        self.search.validate()?;
        if let Some(r) = self.simulation.sample_rate {
            treefit::check_rate(r)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone)]
pub struct SimulatedType {
    pub spec: CascadeType,
    pub sim: SimConfig,
    pub cascades: Vec<TrueCascade>,
    /// `None` when every cascade is a lone root.
    pub truth: Option<TreeParams>,
}

fn sim_config(net: &NetworkSpec, ty: &CascadeType, seed: u64) -> SimConfig {
    SimConfig {
        n_nodes: net.n_nodes,
        edge_prob: net.edge_prob,
        delay_rate: net.delay_rate,
        trans_scale: ty.trans_scale.unwrap_or(net.trans_scale),
        trans_decay: net.trans_decay,
        max_duration: ty.max_duration,
        n_cascades: ty.n_cascades,
        seed,
    }
}

/// One shared contact network; each type gets its own cascade streams.
pub fn simulate(config: &SimulationConfig, seed: u64) -> Result<(ContactNetwork, Vec<SimulatedType>), PipelineError> {
    let names: BTreeSet<&str> = config.types.iter().map(|t| t.name.as_str()).collect();
    if names.len() != config.types.len() || config.types.is_empty() {
        return Err(PipelineError::Input("cascade type names must be unique and non-empty".into()));
    }
    let base = config.types[0].clone();
    let net = netsim::generate_network(&sim_config(&config.network, &base, seed))?;
    let types = config
        .types
        .iter()
        .map(|ty| {
            let sim = sim_config(&config.network, ty, derive_seed(seed, &format!("type/{}", ty.name), 0));
            sim.validate()?;
            let cascades = netsim::simulate_cascades(&net, &sim);
            let truth = netsim::true_params(&cascades).ok();
            Ok(SimulatedType {
                spec: ty.clone(),
                sim,
                cascades,
                truth,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok((net, types))
}

fn message_name(ty: &str, i: usize) -> String {
    format!("{ty}-{i:04}")
}

/// Sampled infections of cascade `i` of a type, as kept indices.
fn sample_of(ty: &SimulatedType, p: f64, i: usize) -> Vec<usize> {
    if p >= 1.0 {
        return (0..ty.cascades[i].len()).collect();
    }
    let mut rng = stream_rng(ty.sim.seed, &format!("sample/{p}"), i as u64);
    netsim::sample_indices(&ty.cascades[i], p, &mut rng)
}

/// Events in the ingest schema, optionally sampled. Cascades that leave
/// fewer than two groups are not exported; the second value counts them.
pub fn simulated_events(types: &[SimulatedType], sample_rate: Option<f64>) -> (Vec<AdoptionEvent>, usize) {
    let mut events = Vec::new();
    let mut dropped = 0;
    for ty in types {
        for (i, c) in ty.cascades.iter().enumerate() {
            let kept = sample_of(ty, sample_rate.unwrap_or(1.0), i);
            if kept.len() < 2 {
                dropped += 1;
                continue;
            }
            let message = MessageId::new(message_name(&ty.spec.name, i)).expect("non-empty");
            for k in kept {
                let inf = c.infections[k];
                events.push(AdoptionEvent {
                    message: message.clone(),
                    group: netsim::node_group(inf.node),
                    time: inf.time,
                    modality: ty.spec.modality,
                    content: ty.spec.content_type,
                    forwarding_score: ty.spec.forwarding_score,
                });
            }
        }
    }
    (events, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRow {
    pub cascade_type: String,
    pub b: Option<f64>,
    pub h: Option<f64>,
    pub n_cascades: usize,
    pub mean_size: f64,
}

pub fn truth_table(types: &[SimulatedType]) -> Vec<TruthRow> {
    types
        .iter()
        .map(|t| TruthRow {
            cascade_type: t.spec.name.clone(),
            b: t.truth.map(|p| p.b()),
            h: t.truth.map(|p| p.h()),
            n_cascades: t.cascades.len(),
            mean_size: t.cascades.iter().map(|c| c.len() as f64).sum::<f64>() / t.cascades.len().max(1) as f64,
        })
        .collect()
}

// ------------------------------------------------------------- reconstruct

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub model: TransmissionModel,
    pub forests: Vec<DiffusionForest>,
    pub stats: Vec<CascadeStats>,
    pub network: Option<InferredNetwork>,
}

pub fn reconstruct_all(
    cascades: &[Cascade],
    config: &PipelineConfig,
    overlap: Option<&GroupOverlapNetwork>,
) -> Result<Reconstruction, PipelineError> {
    let model = TransmissionModel::resolve(cascades, config.overrides())?;
    let (forests, network) = match config.mode {
        Mode::MleTree => (
            cascades.par_iter().map(|c| reconstruct::mle_tree(c, &model, overlap)).collect(),
            None,
        ),
        Mode::Netinf => {
            let budget = config
                .netinf_budget
                .unwrap_or_else(|| cascades.iter().map(|c| c.len() - 1).sum::<usize>().max(1));
            let (net, forests) = reconstruct::infer_network(cascades, &model, budget, overlap)?;
            (forests, Some(net))
        }
    };
    let stats = forests.par_iter().map(reconstruct::cascade_stats).collect();
    Ok(Reconstruction {
        model,
        forests,
        stats,
        network,
    })
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub cascade_type: String,
    pub p: f64,
    pub b: f64,
    pub b_hat: f64,
    pub b_rel_err: f64,
    pub h: f64,
    pub h_hat: f64,
    pub h_rel_err: f64,
    /// Cascades with at least two sampled groups.
    pub n_observed: usize,
    pub n_fitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub truth: Vec<TruthRow>,
    /// Timestamps only: sample, reconstruct, fit.
    pub rows: Vec<ValidationRow>,
    /// Same samples, with statistics read off the true tree. Shows what the
    /// fitter achieves when the sampled subgraph is known.
    pub oracle_rows: Vec<ValidationRow>,
}

fn validation_row(ty: &str, p: f64, truth: TreeParams, fits: &[TreeParams], n_observed: usize) -> ValidationRow {
    let (b_hat, h_hat) = if fits.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let n = fits.len() as f64;
        (fits.iter().map(|f| f.b()).sum::<f64>() / n, fits.iter().map(|f| f.h()).sum::<f64>() / n)
    };
    ValidationRow {
        cascade_type: ty.to_string(),
        p,
        b: truth.b(),
        b_hat,
        b_rel_err: (b_hat - truth.b()).abs() / truth.b(),
        h: truth.h(),
        h_hat,
        h_rel_err: (h_hat - truth.h()).abs() / truth.h(),
        n_observed,
        n_fitted: fits.len(),
    }
}

/// Simulate, sample at each rate, reconstruct, fit, and compare the mean
/// per-cascade estimate with the ground truth.
pub fn run_validation(config: &PipelineConfig) -> Result<ValidationReport, PipelineError> {
    config.validate()?;
    let (_, types) = simulate(&config.simulation, config.seed)?;
    let mut rows = Vec::new();
    let mut oracle_rows = Vec::new();
    for ty in &types {
        let Some(truth) = ty.truth else {
            log::warn!("type {}: no cascade grew beyond its root; skipped", ty.spec.name);
            continue;
        };
        for &p in &config.rates {
            let fitter = Fitter::new(p, config.search)?;
            let labels = CascadeLabels {
                content: ty.spec.content_type,
                modality: ty.spec.modality,
                forwarding_score: ty.spec.forwarding_score,
            };
            let mut observed = Vec::new();
            let mut oracle_stats = Vec::new();
            for (i, c) in ty.cascades.iter().enumerate() {
                let kept = sample_of(ty, p, i);
                if kept.len() < 2 {
                    continue;
                }
                oracle_stats.push(netsim::true_sample_stats(c, &kept));
                let adoptions = kept
                    .iter()
                    .map(|&k| ingest::Adoption {
                        group: netsim::node_group(c.infections[k].node),
                        time: c.infections[k].time,
                    })
                    .collect();
                observed.extend(netsim::observed_cascade(&message_name(&ty.spec.name, i), adoptions, labels));
            }
            if observed.is_empty() {
                log::warn!("type {} at p={p}: no cascade has two sampled groups", ty.spec.name);
                continue;
            }
            let rec = reconstruct_all(&observed, config, None)?;
            let fits: Vec<TreeParams> = rec
                .stats
                .par_iter()
                .map(|s| fitter.fit(s))
                .collect::<Vec<_>>()
                .into_iter()
                .filter_map(|r| r.ok().map(|f| f.params))
                .collect();
            rows.push(validation_row(&ty.spec.name, p, truth, &fits, observed.len()));

            let oracle: Vec<TreeParams> = oracle_stats
                .par_iter()
                .map(|s| fitter.fit_vector(s))
                .collect::<Vec<_>>()
                .into_iter()
                .filter_map(|r| r.ok().map(|f| f.params))
                .collect();
            oracle_rows.push(validation_row(&ty.spec.name, p, truth, &oracle, oracle_stats.len()));
        }
    }
    Ok(ValidationReport {
        truth: truth_table(&types),
        rows,
        oracle_rows,
    })
}

// ----------------------------------------------------------------- analyze

/// Extra per-message labels, keyed by column name.
pub type MessageLabels = BTreeMap<MessageId, BTreeMap<String, String>>;

/// Reads `message_id,<key>...` into per-message label maps.
pub fn load_labels<R: std::io::Read>(source: R) -> Result<MessageLabels, PipelineError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers().map_err(|e| PipelineError::Input(e.to_string()))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "message_id")
        .ok_or_else(|| PipelineError::Input("labels file lacks a message_id column".into()))?;
    let mut out = MessageLabels::new();
    for record in reader.records() {
        let record = record.map_err(|e| PipelineError::Input(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = MessageId::new(record.get(id_col).unwrap_or(""))
            .map_err(|e| PipelineError::Input(format!("labels line {line}: {e}")))?;
        let entry = out.entry(id).or_default();
        for (i, h) in headers.iter().enumerate() {
            if i != id_col {
                entry.insert(h.to_string(), record.get(i).unwrap_or("").to_string());
            }
        }
    }
    Ok(out)
}

pub fn stratum_of(key: &str, cascade: &Cascade, labels: Option<&MessageLabels>) -> Result<String, PipelineError> {
    Ok(match key {
        "content_type" => cascade.labels.content.as_str().to_string(),
        "modality" => cascade.labels.modality.as_str().to_string(),
        "forwarding_score" => ForwardingBucket::from_score(cascade.labels.forwarding_score).as_str().to_string(),
        other => labels
            .and_then(|l| l.get(&cascade.message))
            .and_then(|m| m.get(other))
            .cloned()
            .ok_or_else(|| {
                PipelineError::Input(format!("message {} has no value for stratification key {other:?}", cascade.message))
            })?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WilcoxonRow {
    pub comparison: String,
    pub result: RankSumResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcdfSeries {
    pub stratum: String,
    pub points: Vec<(f64, f64)>,
}

pub struct AnalyzeInputs {
    pub events: Vec<AdoptionEvent>,
    pub catalog: Option<GroupCatalog>,
    pub labels: Option<MessageLabels>,
}

pub struct Analysis {
    pub summary: Vec<ingest::SummaryRow>,
    pub cascades: Vec<Cascade>,
    pub drop_report: DropReport,
    pub reconstruction: Reconstruction,
    pub fits: Vec<Result<FitResult, FitError>>,
    /// Keyed by stratification key.
    pub strata: BTreeMap<String, Vec<StratumSummary>>,
    pub wilcoxon_breadth: Vec<WilcoxonRow>,
    pub wilcoxon_depth: Vec<WilcoxonRow>,
    pub regression_b: Result<RegressionResult, String>,
    pub regression_h: Result<RegressionResult, String>,
    pub ccdf_breadth: Vec<CcdfSeries>,
    pub ccdf_depth: Vec<CcdfSeries>,
    pub group_sizes: Option<Vec<GroupSizeSummary>>,
    pub reach: Option<Vec<ReachDistribution>>,
}

pub const BASE_STRATA: [&str; 3] = ["content_type", "modality", "forwarding_score"];

/// Cascades, their reconstruction and one fit per cascade.
pub type Fitted = (Vec<Cascade>, DropReport, Reconstruction, Vec<Result<FitResult, FitError>>);

/// Preprocess, reconstruct and fit; shared by `fit`, `stats` and `analyze`.
pub fn fit_events(
    events: &[AdoptionEvent],
    catalog: Option<&GroupCatalog>,
    config: &PipelineConfig,
) -> Result<Fitted, PipelineError> {
    config.validate()?;
    let (cascades, drop_report) = ingest::build_cascades(events);
    if cascades.is_empty() {
        return Err(PipelineError::Input("no message reached two or more groups".into()));
    }
    let overlap = match (config.overlap_network, catalog) {
        (false, _) => None,
        (true, Some(c)) => Some(ingest::build_overlap_network(c)?),
        (true, None) => return Err(PipelineError::Input("--overlap-network needs a groups file with members".into())),
    };
    let rec = reconstruct_all(&cascades, config, overlap.as_ref())?;
    let fitter = Fitter::new(config.p, config.search)?;
    let fits = rec.stats.par_iter().map(|s| fitter.fit(s)).collect();
    Ok((cascades, drop_report, rec, fits))
}

pub fn stratify(
    key: &str,
    cascades: &[Cascade],
    fits: &[Result<FitResult, FitError>],
    labels: Option<&MessageLabels>,
) -> Result<Vec<StratumSummary>, PipelineError> {
    let keys = cascades
        .iter()
        .map(|c| stratum_of(key, c, labels))
        .collect::<Result<Vec<_>, _>>()?;
    for k in keys.iter().collect::<BTreeSet<_>>() {
        if !keys.iter().zip(fits).any(|(kk, f)| kk == k && f.is_ok()) {
            log::warn!("stratum {key}={k} has no fittable cascades; omitted");
        }
    }
    Ok(treefit::summarize_strata(
        keys.iter()
            .zip(fits)
            .filter_map(|(k, f)| f.as_ref().ok().map(|f| (k.as_str(), f.params))),
    ))
}

/// One-sided tests for every pair of content types present, in canonical
/// type order: row `a - b` tests "a greater than b".
pub fn wilcoxon_tables(
    cascades: &[Cascade],
    fits: &[Result<FitResult, FitError>],
) -> Result<(Vec<WilcoxonRow>, Vec<WilcoxonRow>), PipelineError> {
    let mut by_type: BTreeMap<ContentType, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (c, f) in cascades.iter().zip(fits) {
        if let Ok(f) = f {
            let e = by_type.entry(c.labels.content).or_default();
            e.0.push(f.params.b());
            e.1.push(f.params.h());
        }
    }
    let present: Vec<ContentType> = ContentType::ALL.into_iter().filter(|t| by_type.contains_key(t)).collect();
    let mut breadth = Vec::new();
    let mut depth = Vec::new();
    for (i, a) in present.iter().enumerate() {
        for b in &present[i + 1..] {
            let name = format!("{} - {}", a.as_str(), b.as_str());
            let (xa, xb) = (&by_type[a], &by_type[b]);
            breadth.push(WilcoxonRow {
                comparison: name.clone(),
                result: stats::rank_sum_test(&xa.0, &xb.0)?,
            });
            depth.push(WilcoxonRow {
                comparison: name,
                result: stats::rank_sum_test(&xa.1, &xb.1)?,
            });
        }
    }
    Ok((breadth, depth))
}

pub fn regressions(
    cascades: &[Cascade],
    fits: &[Result<FitResult, FitError>],
) -> (Result<RegressionResult, String>, Result<RegressionResult, String>) {
    let rows = |pick: fn(&FitResult) -> f64| -> Vec<RegressionRow> {
        cascades
            .iter()
            .zip(fits)
            .filter_map(|(c, f)| {
                f.as_ref().ok().map(|f| RegressionRow {
                    response: pick(f),
                    forwarding: ForwardingBucket::from_score(c.labels.forwarding_score),
                    modality: c.labels.modality,
                    content: c.labels.content,
                })
            })
            .collect()
    };
    let b = stats::ols_regression(&rows(|f| f.params.b()), "b").map_err(|e| e.to_string());
    let h = stats::ols_regression(&rows(|f| f.params.h()), "h").map_err(|e| e.to_string());
    (b, h)
}

pub fn ccdfs(cascades: &[Cascade], st: &[CascadeStats]) -> Result<(Vec<CcdfSeries>, Vec<CcdfSeries>), PipelineError> {
    let mut by_type: BTreeMap<ContentType, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (c, s) in cascades.iter().zip(st) {
        let e = by_type.entry(c.labels.content).or_default();
        e.0.push(s.max_breadth as f64);
        e.1.push(s.depth as f64);
    }
    let mut breadth = Vec::new();
    let mut depth = Vec::new();
    for t in ContentType::ALL {
        if let Some((b, d)) = by_type.get(&t) {
            breadth.push(CcdfSeries {
                stratum: t.as_str().to_string(),
                points: reconstruct::ccdf(b)?,
            });
            depth.push(CcdfSeries {
                stratum: t.as_str().to_string(),
                points: reconstruct::ccdf(d)?,
            });
        }
    }
    Ok((breadth, depth))
}

/// Group sizes per content type and the reach of complete cascades built
/// from each type's mean parameters.
pub fn population_reach(
    cascades: &[Cascade],
    content_strata: &[StratumSummary],
    catalog: &GroupCatalog,
    config: &PipelineConfig,
) -> Result<(Vec<GroupSizeSummary>, Vec<ReachDistribution>), PipelineError> {
    let labelled: Vec<(String, &Cascade)> = cascades
        .iter()
        .map(|c| (c.labels.content.as_str().to_string(), c))
        .collect();
    let sizes = stats::group_size_distribution(&labelled, catalog)?;
    let mut strata = Vec::new();
    for s in content_strata {
        let Some(sample) = sizes.iter().find(|g| g.stratum == s.stratum) else {
            continue;
        };
        strata.push(StratumInput {
            stratum: s.stratum.clone(),
            params: ParamsSource::Mean(TreeParams::new(s.mu_b, s.mu_h)?),
            sizes: sample.sizes.clone(),
        });
    }
    let reach = impact::estimate_reach(&ImpactConfig {
        replicates: config.impact_replicates,
        seed: config.seed,
        strata,
    })?;
    Ok((sizes, reach))
}

/// Every results artifact from one event file.
pub fn analyze(inputs: &AnalyzeInputs, config: &PipelineConfig) -> Result<Analysis, PipelineError> {
    let summary = ingest::summarize_dataset(&inputs.events);
    let (cascades, drop_report, rec, fits) = fit_events(&inputs.events, inputs.catalog.as_ref(), config)?;
    let failed = fits.iter().filter(|f| f.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} cascade fit(s) failed; see fits.csv");
    }

    let mut strata = BTreeMap::new();
    let mut keys: Vec<&str> = BASE_STRATA.to_vec();
    keys.extend(config.stratify_by.iter().map(String::as_str).filter(|k| !BASE_STRATA.contains(k)));
    for key in keys {
        strata.insert(key.to_string(), stratify(key, &cascades, &fits, inputs.labels.as_ref())?);
    }
    let (wilcoxon_breadth, wilcoxon_depth) = wilcoxon_tables(&cascades, &fits)?;
    let (regression_b, regression_h) = regressions(&cascades, &fits);
    let (ccdf_breadth, ccdf_depth) = ccdfs(&cascades, &rec.stats)?;

    let (group_sizes, reach) = match &inputs.catalog {
        None => {
            log::warn!("no groups file; group sizes and reach skipped");
            (None, None)
        }
        Some(catalog) => {
            let (sizes, reach) = population_reach(&cascades, &strata["content_type"], catalog, config)?;
            (Some(sizes), Some(reach))
        }
    };

    Ok(Analysis {
        summary,
        cascades,
        drop_report,
        reconstruction: rec,
        fits,
        strata,
        wilcoxon_breadth,
        wilcoxon_depth,
        regression_b,
        regression_h,
        ccdf_breadth,
        ccdf_depth,
        group_sizes,
        reach,
    })
}
