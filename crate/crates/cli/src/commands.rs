//! Subcommand implementations. Each resolves its settings, writes `config.json`, does its
//! work, and writes one report under `reports/`.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use hessian_penalty::autodiff::ParamStore;
use hessian_penalty::data::{sample_dataset, FactorSpec};
use hessian_penalty::functions::{
    builtin, AnalyticFunction, BuiltinParams, DifferentiableFunction, RotatedSeparable, OUTPUT_TAP,
};
use hessian_penalty::metrics::{activeness_report, ppl, ActivenessReport, PplConfig, PplReport, Prior};
use hessian_penalty::nets::{Checkpoint, Generator};
use hessian_penalty::oracle::{
    diagonality_of_sets, enumeration_suite, exact_hessian_fd, export_hessian_heatmaps, unbiasedness_check,
    DiagonalityReport, EnumerationCase, HessianSet, UnbiasednessCase,
};
use hessian_penalty::penalty::{
    estimate_batch, exact_offdiag_penalty, hessian_penalty_estimate, PenaltyConfig, Reduction,
};
use hessian_penalty::training::{
    best_alignment, discover_directions, discriminator_from_checkpoint, generator_from_checkpoint, Alignment,
    DiscoveryConfig, Mode, TrainConfig, TrainRecord, Trainer,
};
use hessian_penalty::{rng, Tensor};

use crate::output::{default_dir, RunDir};
use crate::settings::{contract, parse_list, parse_range, Settings};
use crate::{Command, Common, PenaltyArgs, Source};

/// A `verify` run whose checks did not hold.
#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate { common, source, penalty, z, repeat } => estimate(common, source, penalty, z, repeat),
        Command::Verify { common, penalty, dims, trials, tol, mc_dim, mc_matrices, mc_trials, mc_sigmas } => {
            let flags = VerifyFlags { dims, trials, tol, mc_dim, mc_matrices, mc_trials, mc_sigmas };
            verify(common, penalty, flags)
        }
        Command::Train {
            common,
            penalty,
            mode,
            lambda,
            warmup,
            steps,
            batch_size,
            lr_g,
            lr_d,
            beta1,
            beta2,
            dataset,
            dataset_size,
            latent_dim,
            hidden,
            disc_hidden,
            init,
        } => {
            let flags = TrainFlags {
                mode,
                lambda,
                warmup,
                steps,
                batch_size,
                lr_g,
                lr_d,
                beta1,
                beta2,
                dataset,
                dataset_size,
                latent_dim,
                hidden,
                disc_hidden,
                init,
            };
            train(common, penalty, flags)
        }
        Command::Directions { common, source, penalty, count, steps, batch_size, lr, eta_max } => {
            directions(common, source, penalty, DirectionFlags { count, steps, batch_size, lr, eta_max })
        }
        Command::Eval {
            common,
            source,
            activeness_base,
            activeness_sweep,
            inactive_fraction,
            ppl_samples,
            ppl_alpha,
            hessian_points,
            hessian_eps,
        } => {
            let flags = EvalFlags {
                activeness_base,
                activeness_sweep,
                inactive_fraction,
                ppl_samples,
                ppl_alpha,
                hessian_points,
                hessian_eps,
            };
            eval(common, source, flags)
        }
        Command::Hessdump { common, source, z, points, eps, top, cell } => {
            hessdump(common, source, z, points, eps, top, cell)
        }
        Command::Data { common, dataset, count } => data(common, dataset, count),
    }
}

/// Settings plus the values every command needs before its own.
struct Prepared {
    settings: Settings,
    seed: u64,
    out: PathBuf,
    name: &'static str,
}

fn prepare(common: &Common, name: &'static str) -> Result<Prepared> {
    let mut settings = Settings::load(common.config.as_deref())?;
    let seed = settings.get("seed", common.seed.as_deref(), 0u64)?;
    let threads: Option<usize> = settings.optional("threads", common.threads.as_deref())?;
    if let Some(n) = threads {
        if n == 0 {
            bail!(contract("--threads must be at least 1"));
        }
        // A pool already exists when commands run in-process more than once; the cap then stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = common.out.clone().unwrap_or_else(|| default_dir(name));
    Ok(Prepared { settings, seed, out, name })
}

impl Prepared {
    /// Rejects unknown config keys, creates the run directory and writes `config.json`.
    fn open(self) -> Result<(RunDir, u64)> {
        let effective = self.settings.finish()?;
        let run = RunDir::create(&self.out)?;
        run.write_config(self.name, self.seed, effective)?;
        Ok((run, self.seed))
    }
}

fn penalty_config(
    s: &mut Settings,
    p: &PenaltyArgs,
    seed: u64,
    reduction: Reduction,
    taps: Vec<String>,
) -> Result<PenaltyConfig> {
    let eps = s.get("eps", p.eps.as_deref(), 0.1f64)?;
    let k = s.get("k", p.k.as_deref(), 2usize)?;
    let reduction = s.get("reduction", p.reduction.as_deref(), reduction)?;
    let taps = s.list("taps", p.taps.as_deref(), taps)?;
    Ok(PenaltyConfig::new(eps, k, reduction, taps, seed)?)
}

/// The function a command studies.
enum Loaded {
    Analytic { name: String, f: Box<dyn AnalyticFunction> },
    Network { path: PathBuf, g: Generator },
}

impl Loaded {
    fn function(&self) -> &dyn DifferentiableFunction {
        match self {
            Loaded::Analytic { f, .. } => f.as_ref(),
            Loaded::Network { g, .. } => g,
        }
    }

    fn label(&self) -> String {
        match self {
            Loaded::Analytic { name, .. } => name.clone(),
            Loaded::Network { path, .. } => path.display().to_string(),
        }
    }
}

/// Resolved `--fn`/`--checkpoint` settings.
struct SourceSpec {
    function: Option<String>,
    checkpoint: Option<PathBuf>,
    params: BuiltinParams,
}

fn source_spec(s: &mut Settings, src: &Source) -> Result<SourceSpec> {
    let function: Option<String> = s.optional("fn", src.function.as_deref())?;
    let checkpoint_flag = src.checkpoint.as_ref().map(|p| p.to_string_lossy().into_owned());
    let checkpoint: Option<PathBuf> = s.optional("checkpoint", checkpoint_flag.as_deref())?;
    let d = BuiltinParams::default();
    let params = BuiltinParams {
        dim: s.get("dim", src.dim.as_deref(), d.dim)?,
        beta: s.get("beta", src.beta.as_deref(), d.beta)?,
        outputs: s.get("outputs", src.outputs.as_deref(), d.outputs)?,
        seed: s.get("fn_seed", src.fn_seed.as_deref(), d.seed)?,
    };
    if function.is_some() == checkpoint.is_some() {
        bail!(contract("give exactly one of --fn and --checkpoint"));
    }
    Ok(SourceSpec { function, checkpoint, params })
}

impl SourceSpec {
    fn load(&self) -> Result<Loaded> {
        match (&self.function, &self.checkpoint) {
            (Some(name), _) => Ok(Loaded::Analytic { name: name.clone(), f: builtin(name, self.params)? }),
            (None, Some(path)) => {
                let ck = Checkpoint::load(path)?;
                Ok(Loaded::Network { path: path.clone(), g: generator_from_checkpoint(&ck)? })
            }
            (None, None) => unreachable!("checked in source_spec"),
        }
    }
}

fn point(s: &mut Settings, flag: Option<&str>, dim: usize) -> Result<Vec<f64>> {
    let z = s.list("z", flag, vec![0.0f64; dim])?;
    if z.len() != dim {
        bail!(contract(format!("--z has {} components, function expects {dim}", z.len())));
    }
    Ok(z)
}

/// Path relative to the run directory, with `/` separators.
fn relative(run: &RunDir, path: &Path) -> String {
    let rel = path.strip_prefix(run.root()).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

const REPEAT_CHUNK: usize = 4096;

#[derive(Serialize)]
struct EstimateReport {
    function: String,
    input_dim: usize,
    z: Vec<f64>,
    epsilon: f64,
    k: usize,
    reduction: Reduction,
    taps: Vec<String>,
    seed: u64,
    /// Estimate with probes drawn from the seed.
    value: f64,
    per_component: Vec<(String, Vec<f64>)>,
    repeat: usize,
    mean: Option<f64>,
    std_error: Option<f64>,
    /// `2·Σ_{i≠j} H²ᵢⱼ` per output from the analytic Hessian, when available.
    exact_per_component: Option<Vec<f64>>,
    exact: Option<f64>,
}

fn estimate(common: Common, source: Source, p: PenaltyArgs, z: Option<String>, repeat: Option<String>) -> Result<()> {
    let mut prep = prepare(&common, "estimate")?;
    let s = &mut prep.settings;
    let spec = source_spec(s, &source)?;
    let cfg = penalty_config(s, &p, prep.seed, Reduction::Max, Vec::new())?;
    let repeat = s.get("repeat", repeat.as_deref(), 1usize)?;
    if repeat == 0 {
        bail!(contract("--repeat must be at least 1"));
    }
    let loaded = spec.load()?;
    let f = loaded.function();
    let z = point(s, z.as_deref(), f.input_dim())?;
    let (run, seed) = prep.open()?;

    let single = hessian_penalty_estimate(f, &z, &cfg)?;
    let (mut mean, mut std_error) = (None, None);
    if repeat > 1 {
        let mut values = Vec::with_capacity(repeat);
        for (c, start) in (0..repeat).step_by(REPEAT_CHUNK).enumerate() {
            let rows = REPEAT_CHUNK.min(repeat - start);
            let batch = Tensor::new(vec![rows, z.len()], z.iter().copied().cycle().take(rows * z.len()).collect())?;
            let mut r = rng::sample_stream(seed, rng::streams::PROBES, c as u64 + 1);
            values.extend(estimate_batch(f, &batch, &cfg, &mut r)?);
        }
        let (m, se) = mean_and_se(&values);
        mean = Some(m);
        std_error = Some(se);
    }
    let taps = cfg.resolve_taps(f);
    let (exact_per_component, exact) = match &loaded {
        Loaded::Analytic { f, .. } if taps == [OUTPUT_TAP] => {
            let per =
                f.hessians(&z).iter().map(|h| Ok(2.0 * exact_offdiag_penalty(h)?)).collect::<Result<Vec<f64>>>()?;
            let reduced = match cfg.reduction() {
                Reduction::Max => per.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Reduction::Mean => per.iter().sum::<f64>() / per.len() as f64,
            };
            (Some(per), Some(reduced))
        }
        _ => (None, None),
    };
    let report = EstimateReport {
        function: loaded.label(),
        input_dim: f.input_dim(),
        z,
        epsilon: cfg.epsilon(),
        k: cfg.k(),
        reduction: cfg.reduction(),
        taps,
        seed,
        value: single.value,
        per_component: single.per_component,
        repeat,
        mean,
        std_error,
        exact_per_component,
        exact,
    };
    let path = run.write_report("estimate", &report)?;
    println!("penalty {}", report.value);
    if let (Some(m), Some(se)) = (report.mean, report.std_error) {
        println!("mean over {repeat} estimates {m} (standard error {se})");
    }
    if let Some(e) = report.exact {
        println!("exact expectation {e}");
    }
    println!("report {}", path.display());
    Ok(())
}

struct VerifyFlags {
    dims: Option<String>,
    trials: Option<String>,
    tol: Option<String>,
    mc_dim: Option<String>,
    mc_matrices: Option<String>,
    mc_trials: Option<String>,
    mc_sigmas: Option<String>,
}

#[derive(Serialize)]
struct EnumerationSummary {
    dims: (usize, usize),
    tolerance: f64,
    max_rel_error: f64,
    pass: bool,
    cases: Vec<EnumerationCase>,
}

#[derive(Serialize)]
struct UnbiasednessSummary {
    sigmas: f64,
    max_deviation: f64,
    pass: bool,
    cases: Vec<UnbiasednessCase>,
}

#[derive(Serialize)]
struct VerifyReport {
    enumeration: EnumerationSummary,
    unbiasedness: Option<UnbiasednessSummary>,
    pass: bool,
}

fn verify(common: Common, p: PenaltyArgs, flags: VerifyFlags) -> Result<()> {
    let mut prep = prepare(&common, "verify")?;
    let s = &mut prep.settings;
    let dims = s.resolve("dims", flags.dims.as_deref(), (2usize, 12usize), parse_range)?;
    let trials = s.get("trials", flags.trials.as_deref(), 50usize)?;
    let tol = s.get("tol", flags.tol.as_deref(), 1e-10f64)?;
    let mc_dim = s.get("mc_dim", flags.mc_dim.as_deref(), 8usize)?;
    let mc_matrices = s.get("mc_matrices", flags.mc_matrices.as_deref(), 5usize)?;
    let mc_trials = s.get("mc_trials", flags.mc_trials.as_deref(), 200_000usize)?;
    let sigmas = s.get("mc_sigmas", flags.mc_sigmas.as_deref(), 3.0f64)?;
    let cfg = penalty_config(s, &p, prep.seed, Reduction::Max, Vec::new())?;
    let (run, seed) = prep.open()?;

    let cases = enumeration_suite(dims.0..=dims.1, trials, seed)?;
    let max_rel_error = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let enumeration = EnumerationSummary { dims, tolerance: tol, max_rel_error, pass: max_rel_error <= tol, cases };
    println!(
        "enumeration: {} matrices, dims {}..{}, max relative error {max_rel_error:.3e} (tolerance {tol:.0e})",
        trials, dims.0, dims.1
    );

    let unbiasedness = if mc_trials > 0 && mc_matrices > 0 {
        let cases = unbiasedness_check(mc_dim, mc_matrices, mc_trials, &cfg, seed)?;
        let max_deviation = cases.iter().map(|c| c.deviation).fold(0.0, f64::max);
        for c in &cases {
            println!(
                "monte carlo: dim {} expected {:.6} mean {:.6} ± {:.6} ({:.2} SE)",
                c.dim, c.expected, c.mean, c.std_error, c.deviation
            );
        }
        Some(UnbiasednessSummary { sigmas, max_deviation, pass: max_deviation <= sigmas, cases })
    } else {
        None
    };
    let pass = enumeration.pass && unbiasedness.as_ref().is_none_or(|u| u.pass);
    let report = VerifyReport { enumeration, unbiasedness, pass };
    let path = run.write_report("verify", &report)?;
    println!("report {}", path.display());
    if !pass {
        return Err(VerificationFailed(format!("see {}", path.display())).into());
    }
    println!("PASS");
    Ok(())
}

struct TrainFlags {
    mode: Option<String>,
    lambda: Option<String>,
    warmup: Option<String>,
    steps: Option<String>,
    batch_size: Option<String>,
    lr_g: Option<String>,
    lr_d: Option<String>,
    beta1: Option<String>,
    beta2: Option<String>,
    dataset: Option<String>,
    dataset_size: Option<String>,
    latent_dim: Option<String>,
    hidden: Option<String>,
    disc_hidden: Option<String>,
    init: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainReport {
    mode: Mode,
    steps_taken: u64,
    /// Last log record without its wall-clock field.
    last: Option<Value>,
    /// Largest absolute parameter change from the initial networks.
    generator_change: f64,
    discriminator_change: f64,
    checkpoint: String,
}

fn max_change(before: &ParamStore, after: &ParamStore) -> Result<f64> {
    let mut m = 0.0f64;
    for p in after.iter() {
        let b = before.get(p.name()).ok_or_else(|| anyhow!("parameter {} appeared during training", p.name()))?;
        for (x, y) in p.value().data().iter().zip(b.value().data()) {
            m = m.max((x - y).abs());
        }
    }
    Ok(m)
}

fn without_clock(rec: &TrainRecord) -> Result<Value> {
    let mut v = serde_json::to_value(rec)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("wall_ms");
    }
    Ok(v)
}

fn train(common: Common, p: PenaltyArgs, f: TrainFlags) -> Result<()> {
    let mut prep = prepare(&common, "train")?;
    let s = &mut prep.settings;
    let d = TrainConfig::default();
    let penalty = penalty_config(s, &p, prep.seed, d.penalty.reduction(), d.penalty.taps().to_vec())?;
    let config = TrainConfig {
        mode: s.get("mode", f.mode.as_deref(), d.mode)?,
        lambda: s.get("lambda", f.lambda.as_deref(), d.lambda)?,
        warmup: s.get("warmup", f.warmup.as_deref(), d.warmup)?,
        steps: s.get("steps", f.steps.as_deref(), d.steps)?,
        batch_size: s.get("batch_size", f.batch_size.as_deref(), d.batch_size)?,
        lr_g: s.get("lr_g", f.lr_g.as_deref(), d.lr_g)?,
        lr_d: s.get("lr_d", f.lr_d.as_deref(), d.lr_d)?,
        beta1: s.get("beta1", f.beta1.as_deref(), d.beta1)?,
        beta2: s.get("beta2", f.beta2.as_deref(), d.beta2)?,
        penalty,
        seed: prep.seed,
        dataset: s.get("dataset", f.dataset.as_deref(), d.dataset.clone())?,
        dataset_size: s.get("dataset_size", f.dataset_size.as_deref(), d.dataset_size)?,
        latent_dim: s.get("latent_dim", f.latent_dim.as_deref(), d.latent_dim)?,
        hidden: s.list("hidden", f.hidden.as_deref(), d.hidden.clone())?,
        disc_hidden: s.list("disc_hidden", f.disc_hidden.as_deref(), d.disc_hidden.clone())?,
    };
    let init_flag = f.init.as_ref().map(|p| p.to_string_lossy().into_owned());
    let init: Option<PathBuf> = s.optional("init", init_flag.as_deref())?;
    let mut trainer = match &init {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let g = generator_from_checkpoint(&ck)?;
            let dnet = discriminator_from_checkpoint(&ck)?;
            Trainer::with_networks(config, g, dnet)?
        }
        None => Trainer::new(config)?,
    };
    let (mut run, _) = prep.open()?;

    let g0 = trainer.generator().params().clone();
    let d0 = trainer.discriminator().params().clone();
    let steps = trainer.config().steps;
    let every = (steps / 10).max(1);
    let result = trainer.train(|rec| {
        if rec.step % every == 0 || rec.step + 1 == steps {
            eprintln!(
                "step {}: {}",
                rec.step,
                serde_json::to_string(&without_clock(rec).unwrap_or(Value::Null)).unwrap_or_default()
            );
        }
        run.log(rec).map_err(|e| hessian_penalty::Error::Format(format!("writing log: {e}")))
    });
    run.flush()?;
    let log = result?;

    let ckpt = run.checkpoints().join("final.ckpt");
    trainer.checkpoint().save(&ckpt)?;
    let report = TrainReport {
        mode: trainer.config().mode,
        steps_taken: trainer.steps_taken(),
        last: log.records.last().map(without_clock).transpose()?,
        generator_change: max_change(&g0, trainer.generator().params())?,
        discriminator_change: max_change(&d0, trainer.discriminator().params())?,
        checkpoint: relative(&run, &ckpt),
    };
    let path = run.write_report("train", &report)?;
    println!("checkpoint {}", ckpt.display());
    println!("report {}", path.display());
    Ok(())
}

struct DirectionFlags {
    count: Option<String>,
    steps: Option<String>,
    batch_size: Option<String>,
    lr: Option<String>,
    eta_max: Option<String>,
}

#[derive(Serialize)]
struct DirectionsReport {
    function: String,
    input_dim: usize,
    /// Learned unit directions, one per entry.
    directions: Vec<Vec<f64>>,
    orthogonality_error: f64,
    max_orthogonality_error: f64,
    initial_penalty: Option<f64>,
    final_penalty: Option<f64>,
    /// Match against the known directions of the built-in function, when it has them.
    alignment: Option<Alignment>,
    alignment_min: Option<f64>,
}

fn directions(common: Common, source: Source, p: PenaltyArgs, f: DirectionFlags) -> Result<()> {
    let mut prep = prepare(&common, "directions")?;
    let s = &mut prep.settings;
    let spec = source_spec(s, &source)?;
    let d = DiscoveryConfig::default();
    let penalty = penalty_config(s, &p, prep.seed, d.penalty.reduction(), d.penalty.taps().to_vec())?;
    let cfg = DiscoveryConfig {
        directions: s.optional("count", f.count.as_deref())?,
        steps: s.get("steps", f.steps.as_deref(), d.steps)?,
        batch_size: s.get("batch_size", f.batch_size.as_deref(), d.batch_size)?,
        lr: s.get("lr", f.lr.as_deref(), d.lr)?,
        eta_max: s.get("eta_max", f.eta_max.as_deref(), d.eta_max)?,
        penalty,
        seed: prep.seed,
        ..d
    };
    let truth = match spec.function.as_deref() {
        Some("rotated-separable") => {
            Some(RotatedSeparable::random(spec.params.dim, spec.params.outputs, spec.params.seed)?.true_directions())
        }
        Some("separable-cubic") => Some(Tensor::identity(spec.params.dim)),
        _ => None,
    };
    let loaded = spec.load()?;
    let (mut run, _) = prep.open()?;

    let frozen;
    let f: &dyn DifferentiableFunction = match &loaded {
        Loaded::Network { g, .. } => {
            frozen = g.frozen();
            &frozen
        }
        other => other.function(),
    };
    let (dm, log) = discover_directions(f, &cfg)?;
    for rec in &log {
        run.log(rec)?;
    }
    run.flush()?;
    let alignment = truth.as_ref().map(|t| best_alignment(&dm.a, t)).transpose()?;
    let report = DirectionsReport {
        function: loaded.label(),
        input_dim: dm.latent_dim(),
        directions: (0..dm.count()).map(|j| dm.direction(j)).collect(),
        orthogonality_error: dm.orthogonality_error(),
        max_orthogonality_error: log.iter().map(|r| r.orthogonality_error).fold(0.0, f64::max),
        initial_penalty: log.first().map(|r| r.penalty),
        final_penalty: log.last().map(|r| r.penalty),
        alignment_min: alignment.as_ref().map(Alignment::min),
        alignment,
    };
    let path = run.write_report("directions", &report)?;
    if let Some(m) = report.alignment_min {
        println!("smallest per-direction alignment {m:.4}");
    }
    println!("orthogonality error {:.3e}", report.orthogonality_error);
    println!("report {}", path.display());
    Ok(())
}

struct EvalFlags {
    activeness_base: Option<String>,
    activeness_sweep: Option<String>,
    inactive_fraction: Option<String>,
    ppl_samples: Option<String>,
    ppl_alpha: Option<String>,
    hessian_points: Option<String>,
    hessian_eps: Option<String>,
}

#[derive(Serialize)]
struct EvalReport {
    function: String,
    activeness: ActivenessReport,
    inactive_fraction: f64,
    inactive: usize,
    ppl: PplReport,
    diagonality: DiagonalityReport,
    hessian_points: Vec<Vec<f64>>,
}

/// `count` latents from the prior, drawn from the oracle stream of `seed`.
fn prior_points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, rng::streams::ORACLE);
    (0..count).map(|_| (0..dim).map(|_| Prior::StandardNormal.sample(&mut r)).collect()).collect()
}

fn hessians(f: &dyn DifferentiableFunction, points: &[Vec<f64>], eps: f64) -> Result<Vec<HessianSet>> {
    Ok(points.iter().map(|z| exact_hessian_fd(f, z, eps)).collect::<hessian_penalty::Result<Vec<_>>>()?)
}

fn eval(common: Common, source: Source, f: EvalFlags) -> Result<()> {
    let mut prep = prepare(&common, "eval")?;
    let s = &mut prep.settings;
    let spec = source_spec(s, &source)?;
    let base = s.get("activeness_base", f.activeness_base.as_deref(), 64usize)?;
    let sweep = s.get("activeness_sweep", f.activeness_sweep.as_deref(), 16usize)?;
    let fraction = s.get("inactive_fraction", f.inactive_fraction.as_deref(), 0.1f64)?;
    let dp = PplConfig::default();
    let ppl_cfg = PplConfig {
        samples: s.get("ppl_samples", f.ppl_samples.as_deref(), dp.samples)?,
        alpha: s.get("ppl_alpha", f.ppl_alpha.as_deref(), dp.alpha)?,
        ..dp
    };
    let points = s.get("hessian_points", f.hessian_points.as_deref(), 8usize)?;
    let eps = s.get("hessian_eps", f.hessian_eps.as_deref(), 1e-3f64)?;
    if points == 0 {
        bail!(contract("--hessian-points must be at least 1"));
    }
    let loaded = spec.load()?;
    let (run, seed) = prep.open()?;

    let g = loaded.function();
    let activeness = activeness_report(g, base, sweep, Prior::StandardNormal, seed)?;
    let inactive = activeness.inactive(fraction);
    let ppl = ppl(g, &ppl_cfg, seed)?;
    let hessian_points = prior_points(g.input_dim(), points, seed);
    let diagonality = diagonality_of_sets(&hessians(g, &hessian_points, eps)?)?;
    let report = EvalReport {
        function: loaded.label(),
        activeness,
        inactive_fraction: fraction,
        inactive,
        ppl,
        diagonality,
        hessian_points,
    };
    let path = run.write_report("eval", &report)?;
    println!("activeness {:?} ({} inactive)", report.activeness.scores, report.inactive);
    println!("path length {}", report.ppl.value);
    println!(
        "diagonality: {:.3} of matrices diagonal-dominant, diagonal/off-diagonal ratio {}",
        report.diagonality.d_percent, report.diagonality.d_ratio
    );
    println!("report {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct DumpedPoint {
    set: HessianSet,
    /// `(output, Σ_{i≠j} H²ᵢⱼ)` of the exported outputs.
    exported: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct HessdumpReport {
    function: String,
    points: Vec<DumpedPoint>,
    diagonality: DiagonalityReport,
    files: Vec<String>,
}

fn hessdump(
    common: Common,
    source: Source,
    z: Option<String>,
    points: Option<String>,
    eps: Option<String>,
    top: Option<String>,
    cell: Option<String>,
) -> Result<()> {
    let mut prep = prepare(&common, "hessdump")?;
    let s = &mut prep.settings;
    let spec = source_spec(s, &source)?;
    let z: Option<Vec<f64>> = s.resolve("z", z.as_deref(), None, |v| parse_list(v).map(Some))?;
    let count = s.get("points", points.as_deref(), 1usize)?;
    let eps = s.get("eps", eps.as_deref(), 1e-3f64)?;
    let top = s.get("top", top.as_deref(), 16usize)?;
    let cell = s.get("cell", cell.as_deref(), 8usize)?;
    if cell == 0 {
        bail!(contract("--cell must be at least 1"));
    }
    let loaded = spec.load()?;
    let f = loaded.function();
    let zs = match z {
        Some(z) => vec![z],
        None => prior_points(f.input_dim(), count, prep.seed),
    };
    let (run, _) = prep.open()?;

    let sets = hessians(f, &zs, eps)?;
    let mut files = Vec::new();
    let mut dumped = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let take = if top == 0 { None } else { Some(top) };
        for path in export_hessian_heatmaps(set, &run.heatmaps(), &format!("p{i}"), take, cell)? {
            files.push(relative(&run, &path));
        }
        let mut ranked = set.ranked_by_penalty()?;
        ranked.truncate(take.unwrap_or(ranked.len()));
        dumped.push(DumpedPoint { set: set.clone(), exported: ranked });
    }
    let report =
        HessdumpReport { function: loaded.label(), diagonality: diagonality_of_sets(&sets)?, points: dumped, files };
    let path = run.write_report("hessdump", &report)?;
    println!("{} files under {}", report.files.len(), run.heatmaps().display());
    println!("report {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct DataReport {
    dataset: String,
    count: usize,
    seed: u64,
    files: Vec<String>,
}

fn data(common: Common, dataset: Option<String>, count: Option<String>) -> Result<()> {
    let mut prep = prepare(&common, "data")?;
    let s = &mut prep.settings;
    let name = s.get("dataset", dataset.as_deref(), "simple-4factor".to_string())?;
    let count = s.get("count", count.as_deref(), 1000usize)?;
    let spec = FactorSpec::builtin(&name)?;
    let (run, seed) = prep.open()?;

    let ds = sample_dataset(&spec, count, seed)?;
    let dir = run.root().join("dataset");
    let written = ds.export(&dir).with_context(|| format!("exporting to {}", dir.display()))?;
    let report = DataReport { dataset: name, count, seed, files: written.iter().map(|p| relative(&run, p)).collect() };
    let path = run.write_report("data", &report)?;
    println!("{} samples under {}", count, dir.display());
    println!("report {}", path.display());
    Ok(())
}
