//! The Hessian Penalty estimator.
//!
//! For each probe `v` with i.i.d. ±1 entries, the second directional derivative `vᵀHv`
//! is approximated by `(G(z + εv) − 2G(z) + G(z − εv)) / ε²`. The penalty of one output
//! component is the Bessel-corrected sample variance of that quantity over `k` probes.
//! Its expectation is `2·Σ_{i≠j} H²ᵢⱼ`; [`PenaltyValue::half`] gives the estimate of the
//! off-diagonal sum itself.
//!
//! Vector outputs are reduced over components with `max` or `mean`, and when several
//! activation taps are selected the per-tap values are averaged. All taps share the same
//! probes for a given base point.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::functions::{DifferentiableFunction, Evaluation};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Max,
    Mean,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Reduction::Max),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::contract(format!("unknown reduction {other:?} (expected max or mean)"))),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Max => "max",
            Reduction::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    epsilon: f64,
    k: usize,
    reduction: Reduction,
    /// Activation taps; empty means the function's default taps.
    taps: Vec<String>,
    seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig { epsilon: 0.1, k: 2, reduction: Reduction::Max, taps: Vec::new(), seed: 0 }
    }
}

impl PenaltyConfig {
    pub fn new(epsilon: f64, k: usize, reduction: Reduction, taps: Vec<String>, seed: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::contract(format!("finite-difference step must be positive, got {epsilon}")));
        }
        if k < 2 {
            return Err(Error::contract(format!("need at least 2 probes for a sample variance, got {k}")));
        }
        Ok(PenaltyConfig { epsilon, k, reduction, taps, seed })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn taps(&self) -> &[String] {
        &self.taps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_taps(mut self, taps: Vec<String>) -> Self {
        self.taps = taps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Configured taps, or the function's defaults when none are named.
    pub fn resolve_taps(&self, f: &dyn DifferentiableFunction) -> Vec<String> {
        if self.taps.is_empty() {
            f.default_taps()
        } else {
            self.taps.clone()
        }
    }
}

/// `k` probe vectors of dimension `dim`, entries exactly ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct RademacherBatch {
    dim: usize,
    values: Vec<f64>,
}

impl RademacherBatch {
    pub fn sample(rng: &mut impl Rng, dim: usize, k: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("probe dimension must be positive"));
        }
        if k < 2 {
            return Err(Error::contract(format!("need at least 2 probes, got {k}")));
        }
        let values = (0..dim * k).map(|_| rng::rademacher(rng)).collect();
        Ok(RademacherBatch { dim, values })
    }

    /// Wraps explicit probes; every entry must be ±1.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::contract("probe vectors must be nonempty and equally long"));
        }
        if vectors.iter().flatten().any(|&x| x != 1.0 && x != -1.0) {
            return Err(Error::contract("probe entries must be exactly -1 or +1"));
        }
        Ok(RademacherBatch { dim, values: vectors.concat() })
    }

    pub fn k(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn probe(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Draws `k` Rademacher vectors from a stream seeded with `seed`.
pub fn sample_rademacher(dim: usize, k: usize, seed: u64) -> Result<RademacherBatch> {
    let mut rng = rng::stream(seed, rng::streams::PROBES);
    RademacherBatch::sample(&mut rng, dim, k)
}

/// Outcome of a single-point estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyValue {
    /// Reduced penalty: per-tap reduction over components, then mean over taps.
    pub value: f64,
    /// Pre-reduction variances, per tap.
    pub per_component: Vec<(String, Vec<f64>)>,
    pub probes: usize,
}

impl PenaltyValue {
    /// `Var/2`, whose expectation is the off-diagonal sum `Σ_{i≠j} H²ᵢⱼ` itself.
    pub fn half(&self) -> f64 {
        self.value / 2.0
    }
}

/// Tape nodes produced by [`penalty_on_tape`].
#[derive(Debug, Clone)]
pub struct PenaltyTerms {
    /// `[batch, 1]` penalty of each base point.
    pub per_sample: Var,
    /// Mean of `per_sample`; the scalar training loss term.
    pub loss: Var,
    /// `[batch, width]` probe variances, per tap.
    pub per_component: Vec<(String, Var)>,
    /// Evaluation of the unperturbed rows; its output is `G(base)`.
    pub base: Evaluation,
}

/// Records the penalty of every row of `base` on `tape`.
///
/// `eval` maps a `[rows, dim]` block of perturbed inputs to an [`Evaluation`]; it is called
/// once, on the stacked block `[base; base + εv₁ … base + εv_k; base − εv₁ … base − εv_k]`.
/// `probes[b]` holds the probes of base row `b`.
pub fn penalty_on_tape<F>(
    tape: &mut Tape,
    base: &Tensor,
    probes: &[RademacherBatch],
    config: &PenaltyConfig,
    taps: &[String],
    eval: F,
) -> Result<PenaltyTerms>
where
    F: FnOnce(&mut Tape, &Tensor) -> Result<Evaluation>,
{
    let (batch, dim) = base.dims2()?;
    if probes.len() != batch {
        return Err(Error::contract(format!("{} probe batches for {batch} base rows", probes.len())));
    }
    let k = config.k;
    if probes.iter().any(|p| p.dim() != dim || p.k() != k) {
        return Err(Error::contract(format!("probes must be {k} vectors of dimension {dim}")));
    }
    if taps.is_empty() {
        return Err(Error::contract("penalty needs at least one tap"));
    }
    if !base.all_finite() {
        return Err(Error::contract("penalty base point must be finite"));
    }
    let eps = config.epsilon;

    let mut stacked = Vec::with_capacity((2 * k + 1) * batch * dim);
    stacked.extend_from_slice(base.data());
    for sign in [1.0, -1.0] {
        for j in 0..k {
            for (b, p) in probes.iter().enumerate() {
                stacked.extend(base.row(b).iter().zip(p.probe(j)).map(|(z, v)| z + sign * eps * v));
            }
        }
    }
    let stacked = Tensor::new(vec![(2 * k + 1) * batch, dim], stacked)?;
    let ev = eval(tape, &stacked)?;

    let mut base_taps = Vec::with_capacity(ev.taps.len());
    for (name, v) in &ev.taps {
        base_taps.push((name.clone(), tape.slice_rows(*v, 0, batch)?));
    }
    let base_output = tape.slice_rows(ev.output, 0, batch)?;

    let selected = ev.select(taps)?;
    let mut per_component = Vec::with_capacity(selected.len());
    let mut reduced = Vec::with_capacity(selected.len());
    for (name, act) in selected {
        let width = tape.value(act).dims2()?.1;
        let center = tape.slice_rows(act, 0, batch)?;
        let twice_center = tape.scale(center, 2.0)?;
        let mut diffs = Vec::with_capacity(k);
        for j in 0..k {
            let plus = tape.slice_rows(act, (1 + j) * batch, batch)?;
            let minus = tape.slice_rows(act, (1 + k + j) * batch, batch)?;
            let d = tape.sub(plus, twice_center)?;
            let d = tape.add(d, minus)?;
            diffs.push(tape.scale(d, 1.0 / (eps * eps))?);
        }
        let stacked_fd = tape.concat_rows(&diffs)?;
        let stacked_fd = tape.reshape(stacked_fd, &[k, batch * width])?;
        let var = tape.variance(stacked_fd)?;
        let var = tape.reshape(var, &[batch, width])?;
        let r = match config.reduction {
            Reduction::Max => tape.max_rows(var)?,
            Reduction::Mean => tape.mean_rows(var)?,
        };
        per_component.push((name, var));
        reduced.push(r);
    }
    let mut per_sample = reduced[0];
    for r in &reduced[1..] {
        per_sample = tape.add(per_sample, *r)?;
    }
    if reduced.len() > 1 {
        per_sample = tape.scale(per_sample, 1.0 / reduced.len() as f64)?;
    }
    let loss = tape.mean(per_sample)?;
    Ok(PenaltyTerms { per_sample, loss, per_component, base: Evaluation { output: base_output, taps: base_taps } })
}

/// Penalty of `f` at each row of `z` as a differentiable tape node; probes come from `rng`.
pub fn penalty_loss(
    tape: &mut Tape,
    f: &dyn DifferentiableFunction,
    z: &Tensor,
    config: &PenaltyConfig,
    rng: &mut impl Rng,
) -> Result<PenaltyTerms> {
    let (batch, dim) = z.dims2()?;
    if dim != f.input_dim() {
        return Err(Error::contract(format!("z has {dim} components, function expects {}", f.input_dim())));
    }
    let probes = (0..batch).map(|_| RademacherBatch::sample(rng, dim, config.k)).collect::<Result<Vec<_>>>()?;
    let taps = config.resolve_taps(f);
    penalty_on_tape(tape, z, &probes, config, &taps, |tape, rows| {
        let x = tape.constant(rows.clone());
        f.evaluate(tape, x)
    })
}

/// Single-point estimate at `z` with probes drawn from `config.seed`.
pub fn hessian_penalty_estimate(
    f: &dyn DifferentiableFunction,
    z: &[f64],
    config: &PenaltyConfig,
) -> Result<PenaltyValue> {
    let probes = sample_rademacher(z.len(), config.k, config.seed)?;
    estimate_with_probes(f, z, &probes, config)
}

/// Single-point estimate with explicit probes.
pub fn estimate_with_probes(
    f: &dyn DifferentiableFunction,
    z: &[f64],
    probes: &RademacherBatch,
    config: &PenaltyConfig,
) -> Result<PenaltyValue> {
    let base = Tensor::new(vec![1, z.len()], z.to_vec())?;
    let mut tape = Tape::new();
    let taps = config.resolve_taps(f);
    let terms = penalty_on_tape(&mut tape, &base, std::slice::from_ref(probes), config, &taps, |tape, rows| {
        let x = tape.constant(rows.clone());
        f.evaluate(tape, x)
    })?;
    Ok(PenaltyValue {
        value: tape.value(terms.loss).item()?,
        per_component: terms.per_component.iter().map(|(n, v)| (n.clone(), tape.value(*v).data().to_vec())).collect(),
        probes: config.k,
    })
}

/// Per-row estimates for a batch of base points, each with fresh probes from `rng`.
pub fn estimate_batch(
    f: &dyn DifferentiableFunction,
    z: &Tensor,
    config: &PenaltyConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let terms = penalty_loss(&mut tape, f, z, config, rng)?;
    Ok(tape.value(terms.per_sample).data().to_vec())
}

/// `(G(z + εv) − 2G(z) + G(z − εv)) / ε²` for the output and each named tap,
/// recorded on `tape` so it can be differentiated with respect to parameters.
pub fn second_directional_fd_on_tape(
    tape: &mut Tape,
    f: &dyn DifferentiableFunction,
    z: &[f64],
    v: &[f64],
    epsilon: f64,
    taps: &[String],
) -> Result<Vec<(String, Var)>> {
    if z.len() != v.len() {
        return Err(Error::contract(format!("direction has {} components, z has {}", v.len(), z.len())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let n = z.len();
    let mut rows = Vec::with_capacity(3 * n);
    rows.extend_from_slice(z);
    rows.extend(z.iter().zip(v).map(|(a, b)| a + epsilon * b));
    rows.extend(z.iter().zip(v).map(|(a, b)| a - epsilon * b));
    let x = tape.constant(Tensor::new(vec![3, n], rows)?);
    let ev = f.evaluate(tape, x)?;
    let mut out = Vec::new();
    for (name, act) in ev.select(taps)? {
        let c = tape.slice_rows(act, 0, 1)?;
        let p = tape.slice_rows(act, 1, 1)?;
        let m = tape.slice_rows(act, 2, 1)?;
        let c2 = tape.scale(c, 2.0)?;
        let d = tape.sub(p, c2)?;
        let d = tape.add(d, m)?;
        out.push((name, tape.scale(d, 1.0 / (epsilon * epsilon))?));
    }
    Ok(out)
}

/// Values of the second directional difference of `f`'s output.
pub fn second_directional_fd(f: &dyn DifferentiableFunction, z: &[f64], v: &[f64], epsilon: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let taps = vec![crate::functions::OUTPUT_TAP.to_string()];
    let out = second_directional_fd_on_tape(&mut tape, f, z, v, epsilon, &taps)?;
    Ok(tape.value(out[0].1).clone())
}

/// `Σ_{i≠j} H²ᵢⱼ`.
pub fn exact_offdiag_penalty(h: &Tensor) -> Result<f64> {
    let (r, c) = h.dims2()?;
    if r != c {
        return Err(Error::contract(format!("expected a square matrix, got {r}x{c}")));
    }
    let mut s = 0.0;
    for i in 0..r {
        for j in 0..c {
            if i != j {
                s += h.at(i, j) * h.at(i, j);
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{BetaCubic, ProductPair, Quadratic, SeparableCubic};

    fn cfg(reduction: Reduction) -> PenaltyConfig {
        PenaltyConfig::new(0.1, 2, reduction, Vec::new(), 0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(PenaltyConfig::new(0.1, 1, Reduction::Max, vec![], 0).is_err());
        assert!(PenaltyConfig::new(0.0, 2, Reduction::Max, vec![], 0).is_err());
        assert!(PenaltyConfig::new(-1.0, 2, Reduction::Max, vec![], 0).is_err());
        assert_eq!("mean".parse::<Reduction>().unwrap(), Reduction::Mean);
        assert!("median".parse::<Reduction>().is_err());
    }

    #[test]
    fn rademacher_entries_and_determinism() {
        let a = sample_rademacher(3, 2, 11).unwrap();
        assert_eq!(a.k(), 2);
        assert!(a.values().iter().all(|&x| x == 1.0 || x == -1.0));
        assert_eq!(a, sample_rademacher(3, 2, 11).unwrap());
        assert!(sample_rademacher(3, 1, 11).is_err());
        assert!(sample_rademacher(0, 2, 11).is_err());
    }

    #[test]
    fn rademacher_mean_concentrates() {
        let n = 100_000;
        let batch = sample_rademacher(4, n, 5).unwrap();
        for c in 0..4 {
            let mean: f64 = (0..n).map(|j| batch.probe(j)[c]).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "coordinate {c}: {mean}");
        }
    }

    #[test]
    fn second_difference_examples() {
        let f = ProductPair::new(2).unwrap();
        let d = second_directional_fd(&f, &[0.0, 0.0], &[1.0, 1.0], 0.1).unwrap();
        assert!((d.item().unwrap() - 2.0).abs() < 1e-12);

        let lin = SeparableCubic::new(vec![1.5, -2.0], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let d = second_directional_fd(&lin, &[0.3, -0.7], &[1.0, -1.0], 0.1).unwrap();
        assert!(d.item().unwrap().abs() < 1e-12);

        let sq = SeparableCubic::new(vec![0.0; 2], vec![1.0, 0.0], vec![0.0; 2]).unwrap();
        for eps in [1e-3, 0.1, 1.0] {
            let d = second_directional_fd(&sq, &[0.4, 2.0], &[1.0, 0.0], eps).unwrap();
            assert!((d.item().unwrap() - 2.0).abs() < 1e-9, "eps {eps}");
        }
    }

    #[test]
    fn mismatched_direction_is_rejected() {
        let f = ProductPair::new(2).unwrap();
        assert!(second_directional_fd(&f, &[0.0, 0.0], &[1.0], 0.1).is_err());
    }

    #[test]
    fn product_pair_over_all_probes_averages_to_four() {
        // The four probe pairs with v₁v₂ equal give variance 0, the others 8.
        let f = ProductPair::new(2).unwrap();
        let vs = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let mut total = 0.0;
        for a in &vs {
            for b in &vs {
                let probes = RademacherBatch::from_vectors(&[a.to_vec(), b.to_vec()]).unwrap();
                let v = estimate_with_probes(&f, &[0.2, -0.3], &probes, &cfg(Reduction::Max)).unwrap();
                assert!(v.value >= 0.0);
                total += v.value;
            }
        }
        assert!((total / 16.0 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn separable_and_beta_cubic_are_blind() {
        for seed in 0..5 {
            let f = SeparableCubic::random(4, seed).unwrap();
            let v = hessian_penalty_estimate(&f, &[0.3, -1.1, 0.8, 2.0], &cfg(Reduction::Max).with_seed(seed)).unwrap();
            assert!(v.value <= 1e-8, "{}", v.value);
        }
        for beta in [1.0, 10.0, 100.0] {
            let f = BetaCubic::new(beta);
            let v = hessian_penalty_estimate(&f, &[1.3, -0.4], &cfg(Reduction::Max)).unwrap();
            assert!(v.value <= 1e-8);
        }
    }

    #[test]
    fn exact_offdiag_examples() {
        assert_eq!(exact_offdiag_penalty(&Tensor::identity(3)).unwrap(), 0.0);
        let h = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(exact_offdiag_penalty(&h).unwrap(), 2.0);
        let h = Tensor::from_rows(&[[2.0, 3.0], [-1.0, 5.0]]).unwrap();
        assert_eq!(exact_offdiag_penalty(&h).unwrap(), 10.0);
        let h = Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(exact_offdiag_penalty(&h), Err(Error::Contract(_))));
    }

    #[test]
    fn half_accessor() {
        let f = Quadratic::new(Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        let probes = RademacherBatch::from_vectors(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let v = estimate_with_probes(&f, &[0.0, 0.0], &probes, &cfg(Reduction::Mean)).unwrap();
        // vᵀHv = ±2 → sample variance 8
        assert!((v.value - 8.0).abs() < 1e-9);
        assert!((v.half() - 4.0).abs() < 1e-9);
    }
}
