//! The evaluation interface shared by generators and analytic test functions, plus a
//! registry of closed-form functions with known Hessians.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

/// Name under which a function's final output is selectable as a tap.
pub const OUTPUT_TAP: &str = "output";

/// Result of evaluating a function on a batch of input rows.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `[rows, output_dim]`.
    pub output: Var,
    /// Named intermediate activations, each `[rows, width]`.
    pub taps: Vec<(String, Var)>,
}

impl Evaluation {
    pub fn output_only(output: Var) -> Self {
        Evaluation { output, taps: Vec::new() }
    }

    /// Looks up taps by name; [`OUTPUT_TAP`] resolves to the final output.
    pub fn select(&self, names: &[String]) -> Result<Vec<(String, Var)>> {
        names
            .iter()
            .map(|name| {
                if name == OUTPUT_TAP {
                    return Ok((name.clone(), self.output));
                }
                self.taps
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(n, v)| (n.clone(), *v))
                    .ok_or_else(|| Error::contract(format!("unknown activation tap {name:?}")))
            })
            .collect()
    }
}

/// A batched vector function whose evaluation is recorded on a [`Tape`].
pub trait DifferentiableFunction: Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Taps used when a penalty configuration does not name any.
    fn default_taps(&self) -> Vec<String> {
        vec![OUTPUT_TAP.to_string()]
    }

    /// Evaluates the rows of `z` (`[rows, input_dim]`).
    fn evaluate(&self, tape: &mut Tape, z: Var) -> Result<Evaluation>;

    /// Output values for constant inputs.
    fn eval_values(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let ev = self.evaluate(&mut tape, zv)?;
        Ok(tape.value(ev.output).clone())
    }
}

pub(crate) fn check_input(f: &dyn DifferentiableFunction, tape: &Tape, z: Var) -> Result<usize> {
    let (rows, cols) = tape.value(z).dims2()?;
    if cols != f.input_dim() {
        return Err(Error::contract(format!("input has {cols} components, function expects {}", f.input_dim())));
    }
    Ok(rows)
}

/// Functions with closed-form Hessians, one matrix per output component.
pub trait AnalyticHessian {
    fn hessians(&self, z: &[f64]) -> Vec<Tensor>;
}

/// `½ zᵀHz` for a symmetric `H`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    h: Tensor,
}

impl Quadratic {
    pub fn new(h: Tensor) -> Result<Self> {
        let (r, c) = h.dims2()?;
        if r != c {
            return Err(Error::contract("quadratic form needs a square matrix"));
        }
        for i in 0..r {
            for j in 0..i {
                if h.at(i, j) != h.at(j, i) {
                    return Err(Error::contract("quadratic form needs a symmetric matrix"));
                }
            }
        }
        Ok(Quadratic { h })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.h
    }
}

impl DifferentiableFunction for Quadratic {
    fn input_dim(&self) -> usize {
        self.h.shape()[0]
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, tape: &mut Tape, z: Var) -> Result<Evaluation> {
        check_input(self, tape, z)?;
        let h = tape.constant(self.h.clone());
        let zh = tape.matmul(z, h)?;
        let prod = tape.mul(zh, z)?;
        let s = tape.sum_rows(prod)?;
        Ok(Evaluation::output_only(tape.scale(s, 0.5)?))
    }
}

impl AnalyticHessian for Quadratic {
    fn hessians(&self, _z: &[f64]) -> Vec<Tensor> {
        vec![self.h.clone()]
    }
}

/// `z₁·z₂`, optionally embedded in a wider input whose other components are ignored.
#[derive(Debug, Clone)]
pub struct ProductPair {
    dim: usize,
}

impl ProductPair {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::contract("z1z2 needs at least two inputs"));
        }
        Ok(ProductPair { dim })
    }
}

impl DifferentiableFunction for ProductPair {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, tape: &mut Tape, z: Var) -> Result<Evaluation> {
        check_input(self, tape, z)?;
        let a = tape.select_cols(z, &[0])?;
        let b = tape.select_cols(z, &[1])?;
        Ok(Evaluation::output_only(tape.mul(a, b)?))
    }
}

impl AnalyticHessian for ProductPair {
    fn hessians(&self, _z: &[f64]) -> Vec<Tensor> {
        let mut h = Tensor::zeros(&[self.dim, self.dim]);
        h.set(0, 1, 1.0);
        h.set(1, 0, 1.0);
        vec![h]
    }
}

/// `Σᵢ aᵢzᵢ + bᵢzᵢ² + cᵢzᵢ³`: a sum of per-component cubics, zero off-diagonal Hessian.
#[derive(Debug, Clone)]
pub struct SeparableCubic {
    linear: Vec<f64>,
    quadratic: Vec<f64>,
    cubic: Vec<f64>,
}

impl SeparableCubic {
    pub fn new(linear: Vec<f64>, quadratic: Vec<f64>, cubic: Vec<f64>) -> Result<Self> {
        if linear.is_empty() || linear.len() != quadratic.len() || linear.len() != cubic.len() {
            return Err(Error::contract("separable cubic coefficient lists must be equally long and nonempty"));
        }
        Ok(SeparableCubic { linear, quadratic, cubic })
    }

    /// Coefficients drawn uniformly from [-2, 2].
    pub fn random(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, streams::ORACLE);
        let mut draw = || (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let (a, b, c) = (draw(), draw(), draw());
        SeparableCubic::new(a, b, c)
    }
}

fn column(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).expect("nonempty column")
}

impl DifferentiableFunction for SeparableCubic {
    fn input_dim(&self) -> usize {
        self.linear.len()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, tape: &mut Tape, z: Var) -> Result<Evaluation> {
        check_input(self, tape, z)?;
        let z2 = tape.square(z)?;
        let z3 = tape.mul(z2, z)?;
        let a = tape.constant(column(&self.linear));
        let b = tape.constant(column(&self.quadratic));
        let c = tape.constant(column(&self.cubic));
        let t1 = tape.matmul(z, a)?;
        let t2 = tape.matmul(z2, b)?;
        let t3 = tape.matmul(z3, c)?;
        let s = tape.add(t1, t2)?;
        Ok(Evaluation::output_only(tape.add(s, t3)?))
    }
}

impl AnalyticHessian for SeparableCubic {
    fn hessians(&self, z: &[f64]) -> Vec<Tensor> {
        let n = self.linear.len();
        let mut h = Tensor::zeros(&[n, n]);
        for i in 0..n {
            h.set(i, i, 2.0 * self.quadratic[i] + 6.0 * self.cubic[i] * z[i]);
        }
        vec![h]
    }
}

/// `β(z₁³ + z₂³)`: zero Hessian penalty at every `β`, path length growing like `β²`.
#[derive(Debug, Clone)]
pub struct BetaCubic {
    beta: f64,
}

impl BetaCubic {
    pub fn new(beta: f64) -> Self {
        BetaCubic { beta }
    }
}

impl DifferentiableFunction for BetaCubic {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, tape: &mut Tape, z: Var) -> Result<Evaluation> {
        check_input(self, tape, z)?;
        let z2 = tape.square(z)?;
        let z3 = tape.mul(z2, z)?;
        let s = tape.sum_rows(z3)?;
        Ok(Evaluation::output_only(tape.scale(s, self.beta)?))
    }
}

impl AnalyticHessian for BetaCubic {
    fn hessians(&self, z: &[f64]) -> Vec<Tensor> {
        let mut h = Tensor::zeros(&[2, 2]);
        h.set(0, 0, 6.0 * self.beta * z[0]);
        h.set(1, 1, 6.0 * self.beta * z[1]);
        vec![h]
    }
}

/// `G(z) = G₀(Rz)` with `R` orthogonal and `G₀` separable:
/// `G₀(u)ₘ = Σᵢ Cᵢₘ tanh(aᵢuᵢ + bᵢ)`.
///
/// The disentangled directions in `z` space are the rows of `R`.
#[derive(Debug, Clone)]
pub struct RotatedSeparable {
    rotation: Tensor,
    gain: Vec<f64>,
    offset: Vec<f64>,
    mix: Tensor,
}

impl RotatedSeparable {
    pub fn new(rotation: Tensor, gain: Vec<f64>, offset: Vec<f64>, mix: Tensor) -> Result<Self> {
        let (r, c) = rotation.dims2()?;
        let (mr, _) = mix.dims2()?;
        if r != c || gain.len() != r || offset.len() != r || mr != r {
            return Err(Error::contract("rotated-separable parts have inconsistent sizes"));
        }
        Ok(RotatedSeparable { rotation, gain, offset, mix })
    }

    /// Random rotation (orthonormalized Gaussian), gains in [0.6, 1.4], offsets in
    /// [-0.5, 0.5] and a Gaussian mixing matrix with `outputs` columns.
    pub fn random(dim: usize, outputs: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, streams::ORACLE);
        let raw = rng::gaussian_matrix(&mut rng, dim, dim, 1.0);
        let rotation = crate::training::gram_schmidt(&raw)?.transpose()?;
        let gain = (0..dim).map(|_| rng.random_range(0.6..1.4)).collect();
        let offset = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mix = rng::gaussian_matrix(&mut rng, dim, outputs, 1.0);
        RotatedSeparable::new(rotation, gain, offset, mix)
    }

    pub fn rotation(&self) -> &Tensor {
        &self.rotation
    }

    /// `Rᵀ`: column `i` is the `z`-space direction that moves only `uᵢ`.
    pub fn true_directions(&self) -> Tensor {
        self.rotation.transpose().expect("square")
    }
}

impl DifferentiableFunction for RotatedSeparable {
    fn input_dim(&self) -> usize {
        self.gain.len()
    }

    fn output_dim(&self) -> usize {
        self.mix.shape()[1]
    }

    fn evaluate(&self, tape: &mut Tape, z: Var) -> Result<Evaluation> {
        check_input(self, tape, z)?;
        let n = self.gain.len();
        // rows: u = z Rᵀ, then per-coordinate gain via a diagonal matrix
        let mut scaled_rt = self.rotation.transpose()?;
        for i in 0..n {
            for j in 0..n {
                let v = scaled_rt.at(i, j) * self.gain[j];
                scaled_rt.set(i, j, v);
            }
        }
        let rt = tape.constant(scaled_rt);
        let u = tape.matmul(z, rt)?;
        let b = tape.constant(Tensor::vector(self.offset.clone()));
        let u = tape.add_bias(u, b)?;
        let h = tape.tanh(u)?;
        let mix = tape.constant(self.mix.clone());
        Ok(Evaluation::output_only(tape.matmul(h, mix)?))
    }
}

impl AnalyticHessian for RotatedSeparable {
    fn hessians(&self, z: &[f64]) -> Vec<Tensor> {
        let n = self.gain.len();
        let u: Vec<f64> = (0..n)
            .map(|i| {
                let ru: f64 = (0..n).map(|j| self.rotation.at(i, j) * z[j]).sum();
                self.gain[i] * ru + self.offset[i]
            })
            .collect();
        // d²/du² tanh(u) = -2 tanh(u) sech²(u)
        let curv: Vec<f64> = u
            .iter()
            .zip(&self.gain)
            .map(|(&u, &a)| {
                let t = u.tanh();
                -2.0 * t * (1.0 - t * t) * a * a
            })
            .collect();
        (0..self.output_dim())
            .map(|m| {
                let mut h = Tensor::zeros(&[n, n]);
                for p in 0..n {
                    for q in 0..n {
                        let v: f64 = (0..n)
                            .map(|i| self.rotation.at(i, p) * self.mix.at(i, m) * curv[i] * self.rotation.at(i, q))
                            .sum();
                        h.set(p, q, v);
                    }
                }
                h
            })
            .collect()
    }
}

/// A registry function paired with its analytic Hessian.
pub trait AnalyticFunction: DifferentiableFunction + AnalyticHessian {}

impl<T: DifferentiableFunction + AnalyticHessian> AnalyticFunction for T {}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &["z1z2", "separable-cubic", "beta-cubic", "rotated-separable", "quadratic"];

/// Parameters for building a registry function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinParams {
    pub dim: usize,
    pub beta: f64,
    pub outputs: usize,
    pub seed: u64,
}

impl Default for BuiltinParams {
    fn default() -> Self {
        BuiltinParams { dim: 2, beta: 1.0, outputs: 8, seed: 0 }
    }
}

/// Builds a registry function by name.
pub fn builtin(name: &str, p: BuiltinParams) -> Result<Box<dyn AnalyticFunction>> {
    Ok(match name {
        "z1z2" => Box::new(ProductPair::new(p.dim)?),
        "separable-cubic" => Box::new(SeparableCubic::random(p.dim, p.seed)?),
        "beta-cubic" => Box::new(BetaCubic::new(p.beta)),
        "rotated-separable" => Box::new(RotatedSeparable::random(p.dim, p.outputs, p.seed)?),
        "quadratic" => Box::new(Quadratic::new(random_symmetric(p.dim, p.seed))?),
        other => {
            return Err(Error::contract(format!(
                "unknown builtin function {other:?}; expected one of {BUILTIN_NAMES:?}"
            )))
        }
    })
}

/// Symmetric matrix with standard-normal entries on and above the diagonal.
pub fn random_symmetric(n: usize, seed: u64) -> Tensor {
    let mut rng = rng::stream(seed, streams::ORACLE);
    let g = rng::gaussian_matrix(&mut rng, n, n, 1.0);
    let mut h = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            h.set(i, j, g.at(i, j));
            h.set(j, i, g.at(i, j));
        }
    }
    h
}
