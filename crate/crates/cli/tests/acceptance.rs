//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use cascade_core::impact::{estimate_reach, ImpactConfig, ParamsSource, StratumInput};
use cascade_core::ingest::{Cascade, CascadeLabels, GroupOverlapNetwork};
use cascade_core::model::{tree_size, ContentType, ForwardingBucket, GroupId, Modality, TreeParams};
use cascade_core::pipeline::{run_validation, PipelineConfig};
use cascade_core::reconstruct::{infer_network, mle_tree, Parent, TransmissionModel};
use cascade_core::stats::{ols_regression, rank_sum_test, rank_sum_test_with, RegressionRow};
use cascade_core::treefit::{expectations, Fitter, SearchSpace, StatVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
    notes: Vec<String>,
}

fn tp(b: f64, h: f64) -> TreeParams {
    TreeParams::new(b, h).unwrap()
}

// ---------------------------------------------------------------- 1

fn validation() -> Outcome {
    let report = run_validation(&PipelineConfig::default()).expect("validation runs");
    let mut pass = true;
    let mut notes = Vec::new();
    let mut seen = 0;
    for r in &report.rows {
        let (bmax, hmax) = match r.cascade_type.as_str() {
            "long" => (0.15, 0.10),
            "short" => (0.25, 0.40),
            _ => continue,
        };
        seen += 1;
        let ok = r.b_rel_err <= bmax && r.h_rel_err <= hmax;
        pass &= ok;
        notes.push(format!(
            "{:<5} p={:.2} b={:.3} b_hat={:.3} err={:.3} (<= {bmax})  h={:.3} h_hat={:.3} err={:.3} (<= {hmax})  {}",
            r.cascade_type,
            r.p,
            r.b,
            r.b_hat,
            r.b_rel_err,
            r.h,
            r.h_hat,
            r.h_rel_err,
            if ok { "ok" } else { "out of bounds" }
        ));
    }
    pass &= seen == 8;
    for r in &report.oracle_rows {
        notes.push(format!(
            "diagnostic, true sampled subgraph: {:<5} p={:.2} b_err={:.3} h_err={:.3}",
            r.cascade_type, r.p, r.b_rel_err, r.h_rel_err
        ));
    }
    let full = PipelineConfig {
        rates: vec![1.0],
        ..Default::default()
    };
    let full = run_validation(&full).expect("full-observation run");
    for r in &full.rows {
        notes.push(format!(
            "informational, full observation: {:<5} b_err={:.3} h_err={:.3} (example bound 0.05)",
            r.cascade_type, r.b_rel_err, r.h_rel_err
        ));
    }
    Outcome {
        pass,
        detail: "validation table within relaxed bounds for both types at p in 0.02..0.05".into(),
        notes,
    }
}

// ---------------------------------------------------------------- 2

/// Complete b-ary tree as (parent, level) per node.
fn complete_tree(b: usize, h: usize) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut parent = vec![None];
    let mut level = vec![0];
    let mut frontier = vec![0];
    for l in 1..=h {
        let mut next = Vec::new();
        for &u in &frontier {
            for _ in 0..b {
                parent.push(Some(u));
                level.push(l);
                next.push(parent.len() - 1);
            }
        }
        frontier = next;
    }
    (parent, level)
}

fn sample_stats(parent: &[Option<usize>], level: &[usize], keep: &[bool]) -> [f64; 4] {
    let n = parent.len();
    let mut linked = vec![false; n];
    let mut s = [0.0f64; 4];
    for v in 0..n {
        if !keep[v] {
            continue;
        }
        s[0] += 1.0;
        s[3] = s[3].max(level[v] as f64);
        if let Some(u) = parent[v] {
            if keep[u] {
                s[1] += 1.0;
                linked[u] = true;
                linked[v] = true;
            }
        }
    }
    s[2] = (0..n).filter(|&v| keep[v] && !linked[v]).count() as f64;
    s
}

fn expectation_formulas() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // exhaustive enumeration, b = 2, h = 2
    let (parent, level) = complete_tree(2, 2);
    let mut worst_enum: f64 = 0.0;
    for p in [0.01f64, 0.1, 0.3, 0.5, 0.77, 1.0] {
        let mut exact = [0.0; 4];
        for mask in 0u32..128 {
            let keep: Vec<bool> = (0..7).map(|i| mask >> i & 1 == 1).collect();
            let k = keep.iter().filter(|&&x| x).count() as i32;
            let prob = p.powi(k) * (1.0 - p).powi(7 - k);
            let s = sample_stats(&parent, &level, &keep);
            for i in 0..4 {
                exact[i] += prob * s[i];
            }
        }
        let e = expectations(p, tp(2.0, 2.0)).unwrap().as_array();
        for i in 0..4 {
            worst_enum = worst_enum.max((e[i] - exact[i]).abs());
        }
    }
    pass &= worst_enum <= 1e-9;
    notes.push(format!("enumeration over 2^7 outcomes: max abs difference {worst_enum:.2e} (tolerance 1e-9)"));

    // Monte Carlo, 50 random triples with integer h
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let triples: Vec<(f64, usize, usize, u64)> = (0..50)
        .map(|i| (rng.random_range(0.02..0.9), rng.random_range(2..=3), rng.random_range(1..=4), i))
        .collect();
    let trials = 100_000;
    let failures: Vec<String> = triples
        .par_iter()
        .filter_map(|&(p, b, h, i)| {
            let (parent, level) = complete_tree(b, h);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let mut sum = [0.0; 4];
            let mut sq = [0.0; 4];
            let mut keep = vec![false; parent.len()];
            for _ in 0..trials {
                for k in keep.iter_mut() {
                    *k = rng.random::<f64>() < p;
                }
                let s = sample_stats(&parent, &level, &keep);
                for j in 0..4 {
                    sum[j] += s[j];
                    sq[j] += s[j] * s[j];
                }
            }
            let e = expectations(p, tp(b as f64, h as f64)).unwrap().as_array();
            let n = trials as f64;
            let mut bad = Vec::new();
            // Outcomes rarer than 3/n are likely unseen, which can make the
            // sample variance vanish; allow for them at the statistic's range.
            let range = [parent.len() as f64, (parent.len() - 1) as f64, parent.len() as f64, h as f64];
            for j in 0..4 {
                let mean = sum[j] / n;
                let var = (sq[j] / n - mean * mean).max(0.0) * n / (n - 1.0);
                let tol = 3.0 * (var / n).sqrt() + 3.0 * range[j] / n;
                if (e[j] - mean).abs() > tol {
                    bad.push(format!("stat {j}: analytic {:.5} vs mc {mean:.5} (tolerance {tol:.5})", e[j]));
                }
            }
            (!bad.is_empty()).then(|| format!("p={p:.3} b={b} h={h}: {}", bad.join("; ")))
        })
        .collect();
    pass &= failures.is_empty();
    notes.push(format!("Monte Carlo: {} of 50 triples outside 3 sigma", failures.len()));
    notes.extend(failures);
    Outcome {
        pass,
        detail: "analytic expectations match enumeration and 100k-trial Monte Carlo".into(),
        notes,
    }
}

// ---------------------------------------------------------------- 3

fn self_consistency() -> Outcome {
    let search = SearchSpace::default();
    let (db, dh) = (search.b_step / 10.0, search.h_step / 10.0);
    let mut pass = true;
    let mut notes = Vec::new();
    for p in [0.02, 0.05] {
        let fitter = Fitter::new(p, search).unwrap();
        for b in [2.0, 3.0, 4.0] {
            for h in [3.0, 5.0, 8.0] {
                let e = expectations(p, tp(b, h)).unwrap();
                let fit = fitter.fit_vector(&StatVector::from(e)).unwrap();
                let ok = (fit.params.b() - b).abs() <= db + 1e-9
                    && (fit.params.h() - h).abs() <= dh + 1e-9
                    && fit.objective < 1e-6;
                if !ok {
                    notes.push(format!(
                        "p={p} ({b},{h}) -> ({}, {}) objective {:.2e}",
                        fit.params.b(),
                        fit.params.h(),
                        fit.objective
                    ));
                }
                pass &= ok;
            }
        }
    }
    Outcome {
        pass,
        detail: format!("18 exact-expectation fits recovered within ({db:.3}, {dh:.3}) with objective < 1e-6"),
        notes,
    }
}

// ---------------------------------------------------------------- 4

fn reach_ratios() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sizes: Vec<u64> = (0..500).map(|_| rng.random_range(5..=256)).collect();
    let stratum = |name: &str, b, h| StratumInput {
        stratum: name.into(),
        params: ParamsSource::Mean(tp(b, h)),
        sizes: sizes.clone(),
    };
    let out = estimate_reach(&ImpactConfig {
        replicates: 20_000,
        seed: 5,
        strata: vec![
            stratum("hateful", 3.78, 4.89),
            stratum("unlabeled", 2.85, 4.50),
            stratum("viral_normal", 3.47, 4.77),
        ],
    })
    .unwrap();
    let r_unl = out[0].mean / out[1].mean;
    let r_vn = out[0].mean / out[2].mean;
    let oracle_unl = tree_size(tp(3.78, 4.89)) / tree_size(tp(2.85, 4.50));
    let oracle_vn = tree_size(tp(3.78, 4.89)) / tree_size(tp(3.47, 4.77));
    let pass = (4.2..=6.4).contains(&r_unl) && (1.4..=2.1).contains(&r_vn);
    Outcome {
        pass,
        detail: format!("hateful/unlabeled {r_unl:.3} in [4.2, 6.4], hateful/viral_normal {r_vn:.3} in [1.4, 2.1]"),
        notes: vec![format!(
            "closed form with interpolated tree sizes: {oracle_unl:.3} and {oracle_vn:.3}"
        )],
    }
}

// ---------------------------------------------------------------- 5

/// Upper-tail probability of the rank sum by listing every assignment.
fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let rank = |v: f64| {
        let below = pooled.iter().filter(|&&w| w < v).count() as f64;
        let equal = pooled.iter().filter(|&&w| w == v).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = pooled.iter().map(|&v| rank(v)).collect();
    let w: f64 = ranks[..x.len()].iter().sum();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        total += 1;
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s >= w - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

fn wilcoxon() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    let hand: [(&[f64], &[f64], f64); 4] = [
        (&[3.0, 4.0], &[1.0, 2.0], 1.0 / 6.0),
        (&[1.0, 2.0], &[3.0, 4.0], 1.0),
        (&[5.0], &[1.0, 2.0, 3.0, 4.0], 0.2),
        (&[2.0, 3.0, 5.0], &[1.0, 4.0, 6.0], 0.65),
    ];
    for (x, y, want) in hand {
        let got = rank_sum_test(x, y).unwrap().p_value;
        let brute = brute_force_p(x, y);
        let ok = (got - want).abs() < 1e-12 && (brute - want).abs() < 1e-12;
        pass &= ok;
        notes.push(format!("x={x:?} y={y:?}: p={got:.6} hand={want:.6} listing={brute:.6}"));
    }
    let mut ties_ok = true;
    for (x, y) in [(vec![1.0, 2.0, 2.0], vec![2.0, 3.0]), (vec![4.0, 4.0, 1.0], vec![4.0, 2.0, 2.0, 3.0])] {
        ties_ok &= (rank_sum_test(&x, &y).unwrap().p_value - brute_force_p(&x, &y)).abs() < 1e-12;
    }
    pass &= ties_ok;
    notes.push(format!("tied samples agree with listing: {ties_ok}"));

    let n = 12;
    let mut worst: f64 = 0.0;
    let mut worst_unbalanced: f64 = 0.0;
    for mask in 1u32..(1 << n) - 1 {
        let x: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i as f64 + 1.0).collect();
        let y: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| i as f64 + 1.0).collect();
        let exact = rank_sum_test_with(&x, &y, usize::MAX).unwrap().p_value;
        let approx = rank_sum_test_with(&x, &y, 0).unwrap().p_value;
        let d = (exact - approx).abs();
        if x.len().min(y.len()) >= 2 {
            worst = worst.max(d);
        } else {
            worst_unbalanced = worst_unbalanced.max(d);
        }
    }
    pass &= worst <= 0.02;
    notes.push(format!(
        "informational, splits with a singleton side: max difference {worst_unbalanced:.4}"
    ));
    Outcome {
        pass,
        detail: format!("hand cases exact; normal vs exact max |diff| {worst:.4} <= 0.02 over tie-free splits of 12 with both sides >= 2"),
        notes,
    }
}

// ---------------------------------------------------------------- 6

fn regression() -> Outcome {
    let planted: BTreeMap<&str, f64> = [
        ("(intercept)", 2.9),
        ("content_type=hateful", 0.3817),
        ("content_type=misinformation", 0.21),
        ("content_type=propaganda", 0.33),
        ("modality=image", 0.012),
        ("modality=video", 0.0445),
        ("forwarding_score=5+", 0.1588),
    ]
    .into_iter()
    .collect();
    let contents = [ContentType::ViralNormal, ContentType::Hateful, ContentType::Misinformation, ContentType::Propaganda];
    let modalities = [Modality::Text, Modality::Image, Modality::Video];
    let buckets = [ForwardingBucket::Zero, ForwardingBucket::FivePlus];
    let mean = |c: ContentType, m: Modality, f: ForwardingBucket| {
        let mut y = planted["(intercept)"];
        if c != ContentType::ViralNormal {
            y += planted[format!("content_type={}", c.as_str()).as_str()];
        }
        if m != Modality::Text {
            y += planted[format!("modality={}", m.as_str()).as_str()];
        }
        if f == ForwardingBucket::FivePlus {
            y += planted["forwarding_score=5+"];
        }
        y
    };
    let noise = Normal::new(0.0, 0.25).unwrap();
    let dataset = |rng: &mut ChaCha8Rng, sd: bool| {
        let mut rows = Vec::new();
        for _ in 0..if sd { 40 } else { 1 } {
            for &c in &contents {
                for &m in &modalities {
                    for &f in &buckets {
                        let e = if sd { noise.sample(rng) } else { 0.0 };
                        rows.push(RegressionRow { response: mean(c, m, f) + e, forwarding: f, modality: m, content: c });
                    }
                }
            }
        }
        rows
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let exact = ols_regression(&dataset(&mut rng, false), "b").unwrap();
    let mut worst_exact: f64 = 0.0;
    for (name, &beta) in &planted {
        worst_exact = worst_exact.max(exact.term(name).map_or(f64::INFINITY, |t| (t.estimate - beta).abs()));
    }

    // A single draw puts some term beyond 2 SE about a third of the time
    // with seven terms, so check the interval's coverage over many draws.
    let replicates = 200;
    let mut covered: BTreeMap<&str, usize> = planted.keys().map(|k| (*k, 0)).collect();
    let mut notes = Vec::new();
    for r in 0..replicates {
        let fit = ols_regression(&dataset(&mut rng, true), "b").unwrap();
        for (name, &beta) in &planted {
            let t = fit.term(name).expect("term present");
            let z = (t.estimate - beta).abs() / t.se;
            *covered.get_mut(name).unwrap() += usize::from(z <= 2.0);
            if r == 0 {
                notes.push(format!("first draw, {name}: planted {beta} estimate {:.4} se {:.4} ({z:.2} se)", t.estimate, t.se));
            }
        }
    }
    let min_cover = covered.values().map(|&c| c as f64 / replicates as f64).fold(1.0, f64::min);
    for (name, c) in &covered {
        notes.push(format!("{name}: within 2 SE in {c}/{replicates} draws"));
    }
    Outcome {
        pass: worst_exact <= 1e-9 && min_cover >= 0.90,
        detail: format!(
            "noiseless max error {worst_exact:.1e}; lowest 2-SE coverage {min_cover:.3} over {replicates} noisy draws (>= 0.90, nominal 0.954)"
        ),
        notes,
    }
}

// ---------------------------------------------------------------- 7

fn random_cascade(rng: &mut ChaCha8Rng, id: usize) -> Cascade {
    let n = rng.random_range(2..=12);
    let pairs: Vec<(String, f64)> = (0..n)
        .map(|g| {
            // coarse times so equal timestamps occur
            let t = if rng.random::<f64>() < 0.3 { rng.random_range(0..6) as f64 } else { rng.random::<f64>() * 6.0 };
            (format!("g{g:02}"), t)
        })
        .collect();
    Cascade::from_pairs(&format!("m{id}"), &pairs, CascadeLabels::default()).unwrap()
}

/// Best parent by direct comparison of linear weights over all candidates.
fn oracle_parents(c: &Cascade, alpha: f64, beta: f64, eps: f64, net: Option<&GroupOverlapNetwork>) -> Vec<Option<GroupId>> {
    let a = c.adoptions();
    a.iter()
        .map(|v| {
            let mut best: Option<(f64, f64, &GroupId)> = None;
            for u in a {
                if u.time >= v.time || net.is_some_and(|n| !n.contains(&u.group, &v.group)) {
                    continue;
                }
                let w = beta * (-(v.time - u.time) / alpha).exp();
                let better = match best {
                    None => true,
                    Some((bw, bt, bg)) => w > bw || (w == bw && (u.time, &u.group) < (bt, bg)),
                };
                if better {
                    best = Some((w, u.time, &u.group));
                }
            }
            best.filter(|(w, _, _)| *w > eps).map(|(_, _, g)| g.clone())
        })
        .collect()
}

fn reconstruction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mismatches = 0;
    let mut unordered = 0;
    for i in 0..1000 {
        let c = random_cascade(&mut rng, i);
        let alpha = rng.random_range(0.2..5.0);
        let beta = rng.random_range(0.1..0.9);
        let eps = beta * rng.random_range(0.001..0.9);
        let model = TransmissionModel::new(alpha, beta, eps).unwrap();
        let net = (i % 2 == 1).then(|| {
            GroupOverlapNetwork::from_edges(
                (0..12)
                    .flat_map(|a| (a + 1..12).map(move |b| (a, b)))
                    .filter(|&(a, b)| (a * 7 + b * 3 + i) % 3 != 0)
                    .map(|(a, b)| (GroupId::new(format!("g{a:02}")).unwrap(), GroupId::new(format!("g{b:02}")).unwrap())),
            )
        });
        let forest = mle_tree(&c, &model, net.as_ref());
        let got: Vec<Option<GroupId>> = (0..forest.len())
            .map(|v| match forest.parent(v) {
                Parent::Node(u) => Some(forest.group(u).clone()),
                Parent::External => None,
            })
            .collect();
        if got != oracle_parents(&c, alpha, beta, eps, net.as_ref()) {
            mismatches += 1;
        }
        if !forest.is_time_ordered() {
            unordered += 1;
        }
    }

    let mut non_monotone = 0;
    let mut netinf_unordered = 0;
    for trial in 0..20 {
        let cascades: Vec<Cascade> = (0..15).map(|i| random_cascade(&mut rng, trial * 100 + i)).collect();
        let model = TransmissionModel::resolve(&cascades, Default::default()).unwrap();
        let (net, forests) = infer_network(&cascades, &model, 60, None).unwrap();
        if net.loglik.windows(2).any(|w| w[1] < w[0] - 1e-9) {
            non_monotone += 1;
        }
        netinf_unordered += forests.iter().filter(|f| !f.is_time_ordered()).count();
    }
    Outcome {
        pass: mismatches == 0 && unordered == 0 && non_monotone == 0 && netinf_unordered == 0,
        detail: format!(
            "argmax mismatches {mismatches}/1000, unordered forests {}, non-monotone inference traces {non_monotone}/20",
            unordered + netinf_unordered
        ),
        notes: Vec::new(),
    }
}

// ---------------------------------------------------------------- 8

fn run_cli(args: &[&str], out: &Path, threads: &str) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("CASCADE_THREADS", threads)
        .env("RUST_LOG", "error")
        .stdout(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    status.success()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{"impact_replicates": 300, "simulation": {"types": [
            {"name": "hv", "max_duration": 0.44, "n_cascades": 25, "content_type": "hateful", "modality": "video", "forwarding_score": 7},
            {"name": "hi", "max_duration": 0.44, "n_cascades": 25, "content_type": "hateful", "modality": "image"},
            {"name": "nv", "max_duration": 0.303, "n_cascades": 25, "content_type": "viral_normal", "modality": "video"},
            {"name": "ni", "max_duration": 0.303, "n_cascades": 25, "content_type": "viral_normal", "modality": "image", "forwarding_score": 5}
        ]}}"#,
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let sim = root.join("sim");
    if !run_cli(&["--config", cfg, "--seed", "3", "simulate"], &sim, "2") {
        return Outcome { pass: false, detail: "simulate failed".into(), notes: Vec::new() };
    }
    let events = sim.join("events.csv");
    let text = std::fs::read_to_string(&events).unwrap();
    let mut groups: Vec<&str> = text.lines().skip(1).filter_map(|l| l.split(',').nth(1)).collect();
    groups.sort();
    groups.dedup();
    let mut g = String::from("group_id,size\n");
    for (i, name) in groups.iter().enumerate() {
        g.push_str(&format!("{name},{}\n", 3 + (i * 37) % 250));
    }
    let groups_path = root.join("groups.csv");
    std::fs::write(&groups_path, g).unwrap();
    let ev = events.to_str().unwrap();
    let gp = groups_path.to_str().unwrap();

    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["--config", cfg, "simulate"]),
        ("validate", vec!["--config", cfg, "validate"]),
        ("reconstruct", vec!["--config", cfg, "reconstruct", "--events", ev]),
        ("reconstruct-netinf", vec!["--config", cfg, "--mode", "netinf", "reconstruct", "--events", ev]),
        ("fit", vec!["--config", cfg, "fit", "--events", ev]),
        ("stats", vec!["--config", cfg, "stats", "--events", ev, "--groups", gp]),
        ("impact", vec!["--config", cfg, "impact", "--events", ev, "--groups", gp]),
        ("analyze", vec!["--config", cfg, "analyze", "--events", ev, "--groups", gp]),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, args) in &commands {
        let a = root.join(format!("{name}-1"));
        let b = root.join(format!("{name}-4"));
        let c = root.join(format!("{name}-4b"));
        let ran = run_cli(args, &a, "1") && run_cli(args, &b, "4") && run_cli(args, &c, "4");
        let same = ran && {
            let (da, db, dc) = (dir_bytes(&a), dir_bytes(&b), dir_bytes(&c));
            da == db && db == dc && !da.is_empty()
        };
        pass &= same;
        if !same {
            notes.push(format!("{name}: {}", if ran { "outputs differ" } else { "command failed" }));
        }
    }
    Outcome {
        pass,
        detail: format!("{} command runs byte-identical across 1 and 4 threads and repeated runs", commands.len()),
        notes,
    }
}

/// The analyze example with a planted two-population input; not one of the
/// numbered criteria, so its outcome is reported without affecting the exit.
fn planted_ordering() -> Vec<String> {
    use cascade_core::pipeline::{analyze, simulate, simulated_events, AnalyzeInputs, CascadeType, SimulationConfig};
    let ty = |name: &str, d: f64, content, scale| CascadeType {
        name: name.into(),
        max_duration: d,
        n_cascades: 80,
        content_type: content,
        modality: Modality::Text,
        forwarding_score: 0,
        trans_scale: scale,
    };
    let cfg = SimulationConfig {
        types: vec![ty("harm", 0.44, ContentType::Hateful, Some(1.0)), ty("norm", 0.303, ContentType::ViralNormal, None)],
        sample_rate: Some(0.05),
        ..Default::default()
    };
    let (_, types) = simulate(&cfg, 4).unwrap();
    let (events, _) = simulated_events(&types, cfg.sample_rate);
    let out = analyze(&AnalyzeInputs { events, catalog: None, labels: None }, &PipelineConfig::default()).unwrap();
    let strata = &out.strata["content_type"];
    let harm = strata.iter().find(|s| s.stratum == "hateful").unwrap();
    let norm = strata.iter().find(|s| s.stratum == "viral_normal").unwrap();
    let p = |t: &[cascade_core::pipeline::WilcoxonRow]| {
        t.iter().find(|w| w.comparison == "hateful - viral_normal").unwrap().result.p_value
    };
    let line = |what: &str, truth: (f64, f64), fit: (f64, f64), p: f64| {
        let ok = fit.0 > fit.1 && p < 0.05;
        format!(
            "example, planted {what} ordering: {} - true {:.3} vs {:.3}, fitted mean {:.3} vs {:.3}, one-sided p {p:.3}",
            if ok { "PASS" } else { "FAIL" },
            truth.0,
            truth.1,
            fit.0,
            fit.1
        )
    };
    let (th, tn) = (types[0].truth.unwrap(), types[1].truth.unwrap());
    vec![
        line("breadth", (th.b(), tn.b()), (harm.mu_b, norm.mu_b), p(&out.wilcoxon_breadth)),
        line("depth", (th.h(), tn.h()), (harm.mu_h, norm.mu_h), p(&out.wilcoxon_depth)),
    ]
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("validation table", validation),
        ("expectation formulas", expectation_formulas),
        ("estimator self-consistency", self_consistency),
        ("population-reach ratios", reach_ratios),
        ("rank-sum test", wilcoxon),
        ("regression recovery", regression),
        ("reconstruction invariants", reconstruction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("criterion {} {name}: {} - {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        for n in &o.notes {
            println!("    {n}");
        }
        failed += usize::from(!o.pass);
    }
    for line in planted_ordering() {
        println!("{line}");
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
