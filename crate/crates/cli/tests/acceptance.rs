//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the lines appear in `cargo test` output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hessian_penalty::autodiff::gradient_check;
use hessian_penalty::functions::{
    builtin, random_symmetric, BetaCubic, BuiltinParams, DifferentiableFunction, Quadratic, RotatedSeparable,
    SeparableCubic, BUILTIN_NAMES,
};
use hessian_penalty::metrics::{activeness_report, ppl, PplConfig, Prior};
use hessian_penalty::nets::{Generator, GeneratorConfig};
use hessian_penalty::oracle::{diagonality_of_sets, enumeration_suite, exact_hessian_fd, unbiasedness_check};
use hessian_penalty::penalty::{
    estimate_batch, penalty_on_tape, second_directional_fd, PenaltyConfig, RademacherBatch,
};
use hessian_penalty::training::{
    best_alignment, discover_directions, orthogonality_error, DiscoveryConfig, Mode, TrainConfig, Trainer,
};
use hessian_penalty::{rng, Tensor};
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gaussian_point(r: &mut rng::Stream, dim: usize) -> Vec<f64> {
    rng::gaussian_matrix(r, 1, dim, 1.0).row(0).to_vec()
}

fn quadratic_form(h: &Tensor, v: &[f64]) -> f64 {
    let n = v.len();
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| v[i] * h.at(i, j) * v[j]).sum()
}

fn enumeration_exactness() -> Outcome {
    let cases = enumeration_suite(2..=12, 50, 0).unwrap();
    let worst = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    outcome(
        worst <= 1e-10,
        format!("{} matrices, n in 2..12, max relative error {worst:.2e} (limit 1e-10)", cases.len()),
    )
}

fn unbiasedness() -> Outcome {
    let cases = unbiasedness_check(8, 5, 200_000, &PenaltyConfig::default(), 0).unwrap();
    let worst = cases.iter().map(|c| c.deviation).fold(0.0, f64::max);
    let pass = cases.iter().all(|c| c.deviation <= 3.0);
    outcome(pass, format!("5 quadratics, 8x8, 2e5 estimates each, largest deviation {worst:.2} SE (limit 3)"))
}

fn fd_fidelity() -> Outcome {
    let mut r = rng::stream(3, 700);
    let mut worst_dir = 0.0f64;
    for t in 0..20 {
        let n = 2 + t % 11;
        let h = random_symmetric(n, 100 + t as u64);
        let f = Quadratic::new(h.clone()).unwrap();
        let z = gaussian_point(&mut r, n);
        let v: Vec<f64> = (0..n).map(|_| rng::rademacher(&mut r)).collect();
        let fd = second_directional_fd(&f, &z, &v, 0.1).unwrap().item().unwrap();
        worst_dir = worst_dir.max((fd - quadratic_form(&h, &v)).abs());
    }
    let mut worst_hess = 0.0f64;
    for name in BUILTIN_NAMES {
        for seed in 0..3 {
            let f = builtin(name, BuiltinParams { dim: 4, beta: 2.0, outputs: 6, seed }).unwrap();
            let z = gaussian_point(&mut r, f.input_dim());
            let set = exact_hessian_fd(f.as_ref(), &z, 1e-3).unwrap();
            for (fd, exact) in set.matrices.iter().zip(f.hessians(&z)) {
                for (a, b) in fd.data().iter().zip(exact.data()) {
                    worst_hess = worst_hess.max((a - b).abs());
                }
            }
        }
    }
    outcome(
        worst_dir <= 1e-9 && worst_hess <= 1e-6,
        format!("directional error {worst_dir:.2e} at eps 0.1 (limit 1e-9); Hessian error {worst_hess:.2e} at eps 1e-3 (limit 1e-6)"),
    )
}

/// Largest penalty over 64 Gaussian base points, each with fresh probes.
fn max_penalty(f: &dyn DifferentiableFunction, seed: u64) -> f64 {
    let z = rng::gaussian_matrix(&mut rng::stream(seed, 701), 64, f.input_dim(), 1.0);
    let vals = estimate_batch(f, &z, &PenaltyConfig::default(), &mut rng::stream(seed, 702)).unwrap();
    vals.into_iter().fold(0.0, f64::max)
}

fn separability_zero() -> Outcome {
    let worst = (0..20u64)
        .map(|i| max_penalty(&SeparableCubic::random(2 + (i as usize) % 7, i).unwrap(), i))
        .fold(0.0, f64::max);
    outcome(worst <= 1e-8, format!("20 separable cubics, largest penalty {worst:.2e} (limit 1e-8)"))
}

fn penalty_is_not_smoothness() -> Outcome {
    let mut penalties = Vec::new();
    let mut lengths = Vec::new();
    for (i, beta) in [1.0, 10.0, 100.0].into_iter().enumerate() {
        let f = BetaCubic::new(beta);
        penalties.push(max_penalty(&f, i as u64));
        lengths.push(ppl(&f, &PplConfig { samples: 10_000, ..PplConfig::default() }, 5).unwrap().value);
    }
    let zero = penalties.iter().all(|&p| p <= 1e-8);
    let increasing = lengths.windows(2).all(|w| w[1] > w[0]);
    let sci = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ");
    outcome(zero && increasing, format!("penalties [{}], path lengths [{}]", sci(&penalties), sci(&lengths)))
}

fn end_to_end_gradient() -> Outcome {
    let g = Generator::new(GeneratorConfig::new(3, vec![16], 8).unwrap(), 21).unwrap();
    let z = rng::gaussian_matrix(&mut rng::stream(22, 703), 4, 3, 1.0);
    let probes: Vec<RademacherBatch> =
        (0..4).map(|b| RademacherBatch::sample(&mut rng::stream(b, 704), 3, 2).unwrap()).collect();
    let cfg = PenaltyConfig::default().with_taps(vec!["norm0".into(), "output".into()]);
    let taps = cfg.resolve_taps(&g);
    let report = gradient_check(
        g.params(),
        |tape, p| {
            let net = Generator::from_parts(g.config().clone(), p.clone())?;
            let terms = penalty_on_tape(tape, &z, &probes, &cfg, &taps, |tape, rows| {
                let x = tape.constant(rows.clone());
                net.evaluate(tape, x)
            })?;
            Ok(terms.loss)
        },
        1e-6,
        1e-4,
    )
    .unwrap();
    let raw = report.params.iter().map(|p| p.max_raw_rel_error).fold(0.0, f64::max);
    outcome(
        report.passed(),
        format!(
            "{} parameter tensors, max relative error {:.2e} ({raw:.2e} before discounting rounding; limit 1e-4)",
            report.params.len(),
            report.max_rel_error()
        ),
    )
}

/// Penalty run and baseline run trained from the same seed.
type SeedPair = (RunStats, RunStats);

/// Diagonality and activeness of one finished run.
struct RunStats {
    d_percent: f64,
    d_ratio: f64,
    inactive: usize,
}

fn train_and_measure(mode: Mode, seed: u64) -> RunStats {
    let cfg = TrainConfig { mode, seed, ..TrainConfig::default() };
    let mut trainer = Trainer::new(cfg).unwrap();
    trainer.train(|_| Ok(())).unwrap();
    let g = trainer.generator();
    let dim = g.config().latent_dim;
    let mut r = rng::stream(1000 + seed, 9);
    let sets: Vec<_> = (0..8).map(|_| exact_hessian_fd(g, &gaussian_point(&mut r, dim), 1e-3).unwrap()).collect();
    let d = diagonality_of_sets(&sets).unwrap();
    let act = activeness_report(g, 64, 16, Prior::StandardNormal, seed).unwrap();
    RunStats { d_percent: d.d_percent, d_ratio: d.d_ratio, inactive: act.inactive(0.1) }
}

fn identifiability() -> Outcome {
    let mut mins = Vec::new();
    let mut worst_ortho = 0.0f64;
    for seed in 0..5 {
        let g = RotatedSeparable::random(4, 8, seed).unwrap();
        let cfg = DiscoveryConfig { steps: 2000, seed, ..DiscoveryConfig::default() };
        let (dm, log) = discover_directions(&g, &cfg).unwrap();
        let al = best_alignment(&dm.a, &g.true_directions()).unwrap();
        mins.push(al.min());
        let run_worst = log.iter().map(|r| r.orthogonality_error).fold(orthogonality_error(&dm.a).unwrap(), f64::max);
        worst_ortho = worst_ortho.max(run_worst);
    }
    let recovered = mins.iter().filter(|&&m| m >= 0.9).count();
    outcome(
        recovered >= 4 && worst_ortho <= 1e-6,
        format!("smallest alignment per seed {mins:.3?}, {recovered}/5 at >= 0.9; max orthogonality error {worst_ortho:.1e}"),
    )
}

/// JSON documents under `dir` with wall-clock fields removed, keyed by relative path.
fn json_payloads(dir: &Path) -> BTreeMap<String, Vec<Value>> {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(o) => {
                o.remove("wall_ms");
                o.values_mut().for_each(strip);
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<Value>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
                continue;
            }
            let name = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let text = fs::read_to_string(&path);
            let docs: Vec<Value> = if name.ends_with(".jsonl") {
                text.unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
            } else if name.ends_with(".json") {
                vec![serde_json::from_str(&text.unwrap()).unwrap()]
            } else {
                continue;
            };
            let docs = docs
                .into_iter()
                .map(|mut d| {
                    strip(&mut d);
                    d
                })
                .collect();
            out.insert(name, docs);
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("runs");
    let ckpt = out.join("train/checkpoints/final.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let second = out.join("directions-checkpoint");
    let second = second.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["estimate", "--fn", "z1z2", "--seed", "7", "--repeat", "5000"],
        vec!["verify", "--dims", "2..8", "--trials", "20", "--mc-trials", "5000"],
        vec![
            "train",
            "--dataset",
            "1fov",
            "--latent-dim",
            "2",
            "--steps",
            "15",
            "--warmup",
            "5",
            "--dataset-size",
            "128",
            "--seed",
            "4",
        ],
        vec!["directions", "--fn", "rotated-separable", "--dim", "3", "--steps", "100", "--seed", "2"],
        vec!["directions", "--checkpoint", ckpt, "--steps", "10", "--seed", "2", "--out", second],
        vec!["eval", "--checkpoint", ckpt, "--ppl-samples", "500", "--seed", "1"],
        vec!["hessdump", "--checkpoint", ckpt, "--points", "2", "--top", "3"],
        vec!["data", "--dataset", "simple-4factor", "--count", "6", "--seed", "3"],
    ];
    let run_all = || -> Result<BTreeMap<String, Vec<Value>>, String> {
        let _ = fs::remove_dir_all(&out);
        for args in &commands {
            let status = Command::new(env!("CARGO_BIN_EXE_hesspen"))
                .args(args)
                .env("HESSPEN_OUT", &out)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
        }
        Ok(json_payloads(&out))
    };
    match (run_all(), run_all()) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
            let pass = differing.is_empty() && a.keys().eq(b.keys());
            outcome(
                pass,
                format!("{} commands, {} JSON files compared, differing {differing:?}", commands.len(), a.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, limit: Option<Duration>, check: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let mut o = check();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                o.pass = false;
                o.detail.push_str(&format!("; runtime over the {}s limit", limit.as_secs()));
            }
        }
        if !o.pass {
            failures += 1;
        }
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id} {name}: {} [{:.1}s]", o.detail, elapsed.as_secs_f64());
    };
    let secs = |s| Some(Duration::from_secs(s));

    report(1, "closed-form exactness", secs(30), &mut enumeration_exactness);
    report(2, "unbiasedness", secs(60), &mut unbiasedness);
    report(3, "finite-difference fidelity", None, &mut fd_fidelity);
    report(4, "separable functions score zero", None, &mut separability_zero);
    report(5, "penalty is not smoothness", None, &mut penalty_is_not_smoothness);
    report(6, "end-to-end penalty gradient", secs(10), &mut end_to_end_gradient);

    // Criteria 7 and 8 share the same ten training runs.
    let start = Instant::now();
    let runs: Vec<SeedPair> =
        (0..5).map(|seed| (train_and_measure(Mode::Gan, seed), train_and_measure(Mode::Baseline, seed))).collect();
    let train_time = start.elapsed();
    let shared = |check: &dyn Fn(&[SeedPair]) -> Outcome| {
        let mut o = check(&runs);
        if train_time > Duration::from_secs(15 * 60) {
            o.pass = false;
            o.detail.push_str("; runtime over the 900s limit");
        }
        o.detail.push_str(&format!("; 10 runs trained in {:.1}s", train_time.as_secs_f64()));
        o
    };
    let diag = shared(&|runs| {
        let wins = runs.iter().filter(|(p, b)| p.d_percent > b.d_percent && p.d_ratio > b.d_ratio).count();
        let pairs: Vec<String> = runs
            .iter()
            .map(|(p, b)| format!("({:.3}/{:.2} vs {:.3}/{:.2})", p.d_percent, p.d_ratio, b.d_percent, b.d_ratio))
            .collect();
        outcome(
            wins >= 4,
            format!("penalty beats baseline on both diagonality measures in {wins}/5 seeds {}", pairs.join(" ")),
        )
    });
    report(7, "diagonality versus baseline", None, &mut || Outcome { pass: diag.pass, detail: diag.detail.clone() });
    let shrink = shared(&|runs| {
        let pen = runs.iter().filter(|(p, _)| p.inactive >= 2).count();
        let base = runs.iter().filter(|(_, b)| b.inactive >= 2).count();
        let counts: Vec<(usize, usize)> = runs.iter().map(|(p, b)| (p.inactive, b.inactive)).collect();
        outcome(
            pen >= 4 && base <= 1,
            format!("seeds with >= 2 inactive components: penalty {pen}/5, baseline {base}/5; (penalty, baseline) counts {counts:?}"),
        )
    });
    report(8, "component shrinkage", None, &mut || Outcome { pass: shrink.pass, detail: shrink.detail.clone() });

    report(9, "direction identifiability", secs(300), &mut identifiability);
    report(10, "CLI determinism", None, &mut determinism);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
