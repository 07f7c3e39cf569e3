use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cascade_core::impact;
use cascade_core::ingest::{self, EventFormat};
use cascade_core::pipeline::{self, Mode, PipelineConfig, PipelineError};
use cascade_core::reconstruct;
use cascade_core::stats::RankSumMethod;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Reconstruct message cascades across chat groups and estimate the size of
/// the complete cascades behind them.
#[derive(Debug, Parser)]
#[command(name = "cascade", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sampling rate of the observed groups.
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// mle-tree or netinf.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Extra stratification keys, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    stratify_by: Vec<String>,
    /// Restrict candidate parents to groups that share members.
    #[arg(long, global = true)]
    overlap_network: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate cascades on a random contact network and export events.
    Simulate,
    /// Run the estimator against simulated ground truth.
    Validate,
    /// Build diffusion forests from an event file.
    Reconstruct(EventArgs),
    /// Reconstruct, then fit breadth and depth per cascade and stratum.
    Fit(EventArgs),
    /// Fit, then rank-sum tests, regressions, CCDFs and group sizes.
    Stats(EventArgs),
    /// Fit, then the population-reach Monte Carlo.
    Impact(EventArgs),
    /// Every output of the commands above in one run.
    Analyze(EventArgs),
}

#[derive(Debug, Args, Clone)]
struct EventArgs {
    /// Events as .csv or .jsonl.
    #[arg(long)]
    events: PathBuf,
    /// `group_id,size[,member_ids]`.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// `message_id,<key>...` used by --stratify-by.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Reconstruct,
    Fit,
    Stats,
    Impact,
    Analyze,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Validate => "validate",
            Command::Reconstruct(_) => "reconstruct",
            Command::Fit(_) => "fit",
            Command::Stats(_) => "stats",
            Command::Impact(_) => "impact",
            Command::Analyze(_) => "analyze",
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Input(format!("{}: {e}", path.display()))
}

fn resolve_config(c: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
            serde_json::from_str(&text).map_err(|e| input_err(path, e))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(p) = c.p {
        cfg.p = p;
    }
    if c.alpha.is_some() {
        cfg.alpha = c.alpha;
    }
    if c.beta.is_some() {
        cfg.beta = c.beta;
    }
    if c.epsilon.is_some() {
        cfg.epsilon = c.epsilon;
    }
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    if !c.stratify_by.is_empty() {
        cfg.stratify_by = c.stratify_by.clone();
    }
    if c.overlap_network {
        cfg.overlap_network = true;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a PipelineConfig,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

/// Collects every output in memory; `finish` writes them from one thread.
struct Run {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<FileHash>,
}

impl Run {
    fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            files: Vec::new(),
            inputs: Vec::new(),
        }
    }

    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, PipelineError> {
        let bytes = fs::read(path).map_err(|e| input_err(path, e))?;
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I)
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r.into_iter().collect::<Vec<_>>()).expect("in-memory write");
        }
        self.add(name, w.into_inner().expect("in-memory flush"));
    }

    fn finish(self, command: &str, config: &PipelineConfig) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.dir).map_err(|e| input_err(&self.dir, e))?;
        let mut outputs = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).map_err(|e| input_err(&path, e))?;
            outputs.push(FileHash {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: self.inputs,
            outputs,
        };
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| input_err(&path, e))?;
        Ok(())
    }
}

fn f(x: f64) -> String {
    x.to_string()
}

fn method_name(m: RankSumMethod) -> &'static str {
    match m {
        RankSumMethod::Exact => "exact",
        RankSumMethod::NormalApprox => "normal",
    }
}

fn cmd_simulate(cfg: &PipelineConfig, run: &mut Run) -> Result<(), PipelineError> {
    let (_, types) = pipeline::simulate(&cfg.simulation, cfg.seed)?;
    let (events, dropped) = pipeline::simulated_events(&types, cfg.simulation.sample_rate);
    if dropped > 0 {
        log::warn!("{dropped} simulated cascade(s) reached fewer than two groups and were not exported");
    }
    let mut bytes = Vec::new();
    ingest::write_events_csv(&events, &mut bytes)?;
    run.add("events.csv", bytes);
    run.json("truth.json", &pipeline::truth_table(&types));
    Ok(())
}

fn cmd_validate(cfg: &PipelineConfig, run: &mut Run) -> Result<(), PipelineError> {
    let report = pipeline::run_validation(cfg)?;
    let header = [
        "cascade_type",
        "p",
        "b",
        "b_hat",
        "b_rel_err",
        "h",
        "h_hat",
        "h_rel_err",
        "n_observed",
        "n_fitted",
    ];
    let row = |r: &pipeline::ValidationRow| {
        vec![
            r.cascade_type.clone(),
            f(r.p),
            f(r.b),
            f(r.b_hat),
            f(r.b_rel_err),
            f(r.h),
            f(r.h_hat),
            f(r.h_rel_err),
            r.n_observed.to_string(),
            r.n_fitted.to_string(),
        ]
    };
    println!("{:<8} {:>5} {:>7} {:>7} {:>8} {:>7} {:>7} {:>8}", "type", "p", "b", "b_hat", "rel_err", "h", "h_hat", "rel_err");
    for r in &report.rows {
        println!(
            "{:<8} {:>5.2} {:>7.3} {:>7.3} {:>8.3} {:>7.3} {:>7.3} {:>8.3}",
            r.cascade_type, r.p, r.b, r.b_hat, r.b_rel_err, r.h, r.h_hat, r.h_rel_err
        );
    }
    run.csv("validation.csv", &header, report.rows.iter().map(row));
    run.csv("validation_oracle.csv", &header, report.oracle_rows.iter().map(row));
    run.json("truth.json", &report.truth);
    Ok(())
}

/// Returns whether any numerical step failed without aborting the run.
fn cmd_events(stage: Stage, args: &EventArgs, cfg: &PipelineConfig, run: &mut Run) -> Result<bool, PipelineError> {
    let bytes = run.read_input(&args.events)?;
    let loaded = ingest::load_events(bytes.as_slice(), EventFormat::from_path(&args.events))
        .map_err(|e| input_err(&args.events, e))?;
    if !loaded.errors.is_empty() {
        for e in loaded.errors.iter().take(20) {
            log::error!("{} line {}: {} {}", args.events.display(), e.line, e.field.as_deref().unwrap_or(""), e.message);
        }
        let lines: Vec<String> = loaded.errors.iter().take(10).map(|e| e.line.to_string()).collect();
        return Err(PipelineError::Input(format!(
            "{}: {} malformed row(s), first at line(s) {}",
            args.events.display(),
            loaded.errors.len(),
            lines.join(", ")
        )));
    }
    let catalog = match &args.groups {
        Some(path) => {
            let bytes = run.read_input(path)?;
            Some(ingest::load_groups(bytes.as_slice()).map_err(|e| input_err(path, e))?)
        }
        None => None,
    };
    let labels = match &args.labels {
        Some(path) => {
            let bytes = run.read_input(path)?;
            Some(pipeline::load_labels(bytes.as_slice())?)
        }
        None => None,
    };
    if stage >= Stage::Impact && stage != Stage::Analyze && catalog.is_none() {
        return Err(PipelineError::Input("impact needs --groups".into()));
    }

    let mut numerical_failure = false;
    if stage == Stage::Analyze {
        let summary = ingest::summarize_dataset(&loaded.events);
        run.csv(
            "dataset_summary.csv",
            &["category", "level", "messages", "groups"],
            summary
                .iter()
                .map(|r| vec![r.category.to_string(), r.level.clone(), r.messages.to_string(), r.groups.to_string()]),
        );
    }

    let (cascades, drop_report, rec, fits) = pipeline::fit_events(&loaded.events, catalog.as_ref(), cfg)?;
    run.json("drop_report.json", &drop_report);
    run.json(
        "model.json",
        &serde_json::json!({
            "alpha": rec.model.alpha(),
            "beta": rec.model.beta(),
            "epsilon": rec.model.epsilon(),
        }),
    );
    let mut bytes = Vec::new();
    reconstruct::write_forests_csv(&rec.forests, &mut bytes).map_err(|e| PipelineError::Input(e.to_string()))?;
    run.add("forests.csv", bytes);
    let rows: Vec<_> = cascades.iter().map(|c| c.message.clone()).zip(rec.stats.iter().copied()).collect();
    let mut bytes = Vec::new();
    reconstruct::write_stats_csv(&rows, &mut bytes).map_err(|e| PipelineError::Input(e.to_string()))?;
    run.add("cascade_stats.csv", bytes);
    if let Some(net) = &rec.network {
        run.csv(
            "network.csv",
            &["source", "target", "gain"],
            net.edges
                .iter()
                .zip(&net.gains)
                .map(|((u, v), g)| vec![u.as_str().to_string(), v.as_str().to_string(), f(*g)]),
        );
        run.csv(
            "netinf_trace.csv",
            &["edges", "loglik"],
            net.loglik.iter().enumerate().map(|(i, l)| vec![i.to_string(), f(*l)]),
        );
    }
    if stage == Stage::Reconstruct {
        return Ok(false);
    }

    run.csv(
        "fits.csv",
        &["message_id", "b", "h", "objective", "status"],
        cascades.iter().zip(&fits).map(|(c, r)| match r {
            Ok(fit) => vec![
                c.message.as_str().to_string(),
                f(fit.params.b()),
                f(fit.params.h()),
                f(fit.objective),
                "ok".to_string(),
            ],
            Err(e) => vec![c.message.as_str().to_string(), String::new(), String::new(), String::new(), e.to_string()],
        }),
    );
    if fits.iter().any(|r| r.is_err()) {
        log::error!("some cascade fits failed; see fits.csv");
        numerical_failure = true;
    }
    let mut keys: Vec<&str> = pipeline::BASE_STRATA.to_vec();
    keys.extend(cfg.stratify_by.iter().map(String::as_str).filter(|k| !pipeline::BASE_STRATA.contains(k)));
    let mut content_strata = Vec::new();
    for key in keys {
        let strata = pipeline::stratify(key, &cascades, &fits, labels.as_ref())?;
        run.csv(
            &format!("strata_{key}.csv"),
            &["stratum", "mu_b", "sigma_b", "mu_h", "sigma_h", "n"],
            strata.iter().map(|s| {
                vec![s.stratum.clone(), f(s.mu_b), f(s.sigma_b), f(s.mu_h), f(s.sigma_h), s.n.to_string()]
            }),
        );
        if key == "content_type" {
            content_strata = strata;
        }
    }

    if stage == Stage::Stats || stage == Stage::Analyze {
        let (wb, wd) = pipeline::wilcoxon_tables(&cascades, &fits)?;
        for (name, rows) in [("wilcoxon_breadth.csv", wb), ("wilcoxon_depth.csv", wd)] {
            run.csv(
                name,
                &["comparison", "statistic", "p_value", "method", "n_x", "n_y"],
                rows.iter().map(|r| {
                    vec![
                        r.comparison.clone(),
                        f(r.result.statistic),
                        f(r.result.p_value),
                        method_name(r.result.method).to_string(),
                        r.result.n_x.to_string(),
                        r.result.n_y.to_string(),
                    ]
                }),
            );
        }
        let (rb, rh) = pipeline::regressions(&cascades, &fits);
        for (name, result) in [("regression_b.csv", rb), ("regression_h.csv", rh)] {
            match result {
                Ok(reg) => run.csv(
                    name,
                    &["term", "estimate", "se", "p"],
                    reg.terms
                        .iter()
                        .map(|t| vec![t.term.clone(), f(t.estimate), f(t.se), f(t.p_value)]),
                ),
                Err(e) => {
                    log::error!("{name}: {e}");
                    numerical_failure = true;
                }
            }
        }
        let (cb, cd) = pipeline::ccdfs(&cascades, &rec.stats)?;
        for (name, series) in [("ccdf_breadth.csv", cb), ("ccdf_depth.csv", cd)] {
            run.csv(
                name,
                &["stratum", "x", "ccdf"],
                series
                    .iter()
                    .flat_map(|s| s.points.iter().map(|(x, y)| vec![s.stratum.clone(), f(*x), f(*y)])),
            );
        }
    }

    if let Some(catalog) = &catalog {
        if stage >= Stage::Stats {
            let (sizes, reach) = pipeline::population_reach(&cascades, &content_strata, catalog, cfg)?;
            run.csv(
                "group_sizes.csv",
                &["stratum", "n", "q05", "q25", "q50", "q75", "q95"],
                sizes.iter().map(|g| {
                    let mut row = vec![g.stratum.clone(), g.sizes.len().to_string()];
                    row.extend(g.quantiles.iter().map(|q| f(*q)));
                    row
                }),
            );
            if stage >= Stage::Impact {
                write_reach(run, &reach, cfg.histogram_bins)?;
            }
        }
    } else if stage == Stage::Analyze {
        log::warn!("no --groups given; group sizes and reach skipped");
    }
    Ok(numerical_failure)
}

fn write_reach(run: &mut Run, reach: &[impact::ReachDistribution], bins: usize) -> Result<(), PipelineError> {
    run.csv(
        "reach_samples.csv",
        &["stratum", "replicate", "reach"],
        reach
            .iter()
            .flat_map(|r| r.samples.iter().enumerate().map(|(i, s)| vec![r.stratum.clone(), i.to_string(), s.to_string()])),
    );
    run.csv(
        "reach_summary.csv",
        &["stratum", "replicates", "mean", "median"],
        reach.iter().map(|r| {
            let mut sorted: Vec<f64> = r.samples.iter().map(|&s| s as f64).collect();
            sorted.sort_by(f64::total_cmp);
            let median = cascade_core::stats::quantile_sorted(&sorted, 0.5);
            vec![r.stratum.clone(), r.samples.len().to_string(), f(r.mean), f(median)]
        }),
    );
    let mut rows = Vec::new();
    for r in reach {
        for b in impact::histogram(&r.samples, bins)? {
            rows.push(vec![r.stratum.clone(), f(b.lo), f(b.hi), b.count.to_string()]);
        }
    }
    run.csv("reach_histogram.csv", &["stratum", "lo", "hi", "count"], rows);
    Ok(())
}

fn configure_threads() -> Result<(), PipelineError> {
    if let Ok(v) = std::env::var("CASCADE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| PipelineError::Input(format!("CASCADE_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Input(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, PipelineError> {
    configure_threads()?;
    let cfg = resolve_config(&cli.common)?;
    let mut run = Run::new(cli.common.out_dir.clone());
    if let Some(path) = &cli.common.config {
        run.read_input(path)?;
    }
    let failed = match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &mut run).map(|_| false)?,
        Command::Validate => cmd_validate(&cfg, &mut run).map(|_| false)?,
        Command::Reconstruct(a) => cmd_events(Stage::Reconstruct, a, &cfg, &mut run)?,
        Command::Fit(a) => cmd_events(Stage::Fit, a, &cfg, &mut run)?,
        Command::Stats(a) => cmd_events(Stage::Stats, a, &cfg, &mut run)?,
        Command::Impact(a) => cmd_events(Stage::Impact, a, &cfg, &mut run)?,
        Command::Analyze(a) => cmd_events(Stage::Analyze, a, &cfg, &mut run)?,
    };
    run.finish(cli.command.name(), &cfg)?;
    Ok(failed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
