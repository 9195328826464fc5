use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gram_schmidt::{gram_schmidt, orthogonality_error};
use crate::autodiff::{Adam, AdamConfig, ParamStore, Parameter, Tape};
use crate::error::{Error, Result};
use crate::functions::{DifferentiableFunction, OUTPUT_TAP};
use crate::penalty::{penalty_on_tape, PenaltyConfig, RademacherBatch, Reduction};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

const PARAM_NAME: &str = "directions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// Number of directions; `None` uses the latent size.
    pub directions: Option<usize>,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Step sizes are drawn from `U[-eta_max, eta_max]`.
    pub eta_max: f64,
    pub penalty: PenaltyConfig,
    pub seed: u64,
    /// Starting matrix; a random orthogonal matrix when absent.
    #[serde(skip)]
    pub initial: Option<Tensor>,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            directions: None,
            steps: 1000,
            batch_size: 16,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eta_max: 5.0,
            penalty: PenaltyConfig::default().with_reduction(Reduction::Mean).with_taps(vec![OUTPUT_TAP.to_string()]),
            seed: 0,
            initial: None,
        }
    }
}

/// Orthonormal `[latent, N]` matrix whose columns are latent directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMatrix {
    pub a: Tensor,
}

impl DirectionMatrix {
    pub fn latent_dim(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn count(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn direction(&self, j: usize) -> Vec<f64> {
        self.a.column(j)
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.a).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub step: u64,
    pub penalty: f64,
    pub orthogonality_error: f64,
    pub wall_ms: f64,
}

fn random_orthogonal(dim: usize, n: usize, seed: u64) -> Result<Tensor> {
    let mut rng = rng::stream(seed, streams::INIT);
    gram_schmidt(&rng::gaussian_matrix(&mut rng, dim, n, 1.0))
}

/// Learns `N` directions of a frozen function `g` by minimizing the penalty of
/// `w ↦ g(z + η·A·w)` at one-hot `w`, with probes in `w` space. Only `A` is updated and it
/// is re-orthonormalized before every forward pass.
pub fn discover_directions(
    g: &dyn DifferentiableFunction,
    cfg: &DiscoveryConfig,
) -> Result<(DirectionMatrix, Vec<DiscoveryRecord>)> {
    let dim = g.input_dim();
    let n = cfg.directions.unwrap_or(dim);
    if n == 0 || n > dim {
        return Err(Error::contract(format!("direction count must be in 1..={dim}, got {n}")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    if !(cfg.eta_max > 0.0 && cfg.eta_max.is_finite()) {
        return Err(Error::contract(format!("eta_max must be positive, got {}", cfg.eta_max)));
    }
    let initial = match &cfg.initial {
        Some(a) => {
            if a.shape() != [dim, n] {
                return Err(Error::contract(format!("initial directions must be [{dim}, {n}], got {:?}", a.shape())));
            }
            a.clone()
        }
        None => random_orthogonal(dim, n, cfg.seed)?,
    };
    let mut store = ParamStore::new();
    store.insert(Parameter::new(PARAM_NAME, initial))?;
    let mut opt = Adam::new(AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2))?;
    let mut sample_rng = rng::stream(cfg.seed, streams::DIRECTIONS);
    let mut probe_rng = rng::stream(cfg.seed, streams::PROBES);
    let taps = cfg.penalty.resolve_taps(g);
    let batch = cfg.batch_size;
    let mut log = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let start = Instant::now();
        let a = gram_schmidt(store.at(0).value())?;
        let ortho = orthogonality_error(&a)?;
        store.at_mut(0).set_value(a)?;

        let z = rng::gaussian_matrix(&mut sample_rng, batch, dim, 1.0);
        let mut w = Tensor::zeros(&[batch, n]);
        let mut eta = Vec::with_capacity(batch);
        for b in 0..batch {
            w.set(b, sample_rng.random_range(0..n), 1.0);
            eta.push(sample_rng.random_range(-cfg.eta_max..=cfg.eta_max));
        }
        let probes = (0..batch)
            .map(|_| RademacherBatch::sample(&mut probe_rng, n, cfg.penalty.k()))
            .collect::<Result<Vec<_>>>()?;

        let mut tape = Tape::new();
        let av = tape.param(store.at(0));
        let terms = penalty_on_tape(&mut tape, &w, &probes, &cfg.penalty, &taps, |tape, rows| {
            let r = rows.dims2()?.0;
            let reps = r / batch;
            let mut scale = Tensor::zeros(&[r, dim]);
            let mut shift = Tensor::zeros(&[r, dim]);
            for block in 0..reps {
                for b in 0..batch {
                    let row = block * batch + b;
                    scale.row_mut(row).fill(eta[b]);
                    shift.row_mut(row).copy_from_slice(z.row(b));
                }
            }
            let wv = tape.constant(rows.clone());
            let at = tape.transpose(av)?;
            let moved = tape.matmul(wv, at)?;
            let sv = tape.constant(scale);
            let moved = tape.mul(moved, sv)?;
            let zv = tape.constant(shift);
            let input = tape.add(zv, moved)?;
            g.evaluate(tape, input)
        })?;
        let penalty = tape.value(terms.loss).item()?;
        if !penalty.is_finite() {
            return Err(Error::Numeric { op: "discovery penalty", detail: format!("penalty is {penalty}") });
        }
        let grads = tape.backward(terms.loss)?;
        let grad = grads
            .get(PARAM_NAME)
            .ok_or_else(|| Error::Numeric { op: "discovery", detail: "no gradient reached the directions".into() })?;
        let mut only_a = crate::autodiff::Gradients::default();
        only_a.insert(PARAM_NAME, grad.clone());
        store.accumulate(&only_a)?;
        opt.step(&mut store)?;
        log.push(DiscoveryRecord {
            step,
            penalty,
            orthogonality_error: ortho,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    let a = gram_schmidt(store.at(0).value())?;
    Ok((DirectionMatrix { a }, log))
}

/// Signed-permutation matching between learned directions and reference directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[j]` is the reference column matched to learned column `j`.
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    /// `|⟨a_j, t_σ(j)⟩|` per learned column.
    pub per_column: Vec<f64>,
}

impl Alignment {
    pub fn min(&self) -> f64 {
        self.per_column.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn permutations(n: usize, k: usize, current: &mut Vec<usize>, used: &mut [bool], visit: &mut dyn FnMut(&[usize])) {
    if current.len() == k {
        visit(current);
        return;
    }
    for c in 0..n {
        if !used[c] {
            used[c] = true;
            current.push(c);
            permutations(n, k, current, used, visit);
            current.pop();
            used[c] = false;
        }
    }
}

/// Exhaustive search for the assignment of learned columns of `a` to columns of `truth`
/// maximizing the summed absolute inner products. Both are `[latent, _]` matrices.
pub fn best_alignment(a: &Tensor, truth: &Tensor) -> Result<Alignment> {
    let (rows, k) = a.dims2()?;
    let (trows, n) = truth.dims2()?;
    if rows != trows || k > n {
        return Err(Error::contract(format!("cannot align {:?} against {:?}", a.shape(), truth.shape())));
    }
    if n > 9 {
        return Err(Error::contract("brute-force alignment supports at most 9 reference directions"));
    }
    let dots = a.transpose()?.matmul(truth)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    permutations(n, k, &mut Vec::with_capacity(k), &mut vec![false; n], &mut |perm| {
        let score: f64 = perm.iter().enumerate().map(|(j, &c)| dots.at(j, c).abs()).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm.to_vec()));
        }
    });
    let permutation = best.map(|(_, p)| p).expect("at least one permutation");
    let signs = permutation.iter().enumerate().map(|(j, &c)| dots.at(j, c).signum()).collect();
    let per_column = permutation.iter().enumerate().map(|(j, &c)| dots.at(j, c).abs()).collect();
    Ok(Alignment { permutation, signs, per_column })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::SeparableCubic;

    #[test]
    fn alignment_recovers_signed_permutation() {
        let truth = Tensor::identity(3);
        let a = Tensor::from_rows(&[vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let al = best_alignment(&a, &truth).unwrap();
        assert_eq!(al.permutation, vec![2, 0, 1]);
        assert_eq!(al.signs, vec![1.0, -1.0, 1.0]);
        assert_eq!(al.min(), 1.0);
    }

    #[test]
    fn single_direction_is_a_unit_vector() {
        let g = SeparableCubic::random(3, 4).unwrap();
        let cfg = DiscoveryConfig { directions: Some(1), steps: 5, batch_size: 4, ..DiscoveryConfig::default() };
        let (dm, log) = discover_directions(&g, &cfg).unwrap();
        assert_eq!(dm.a.shape(), &[3, 1]);
        let norm: f64 = dm.direction(0).iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(log.len(), 5);
    }

    #[test]
    fn too_many_directions_rejected() {
        let g = SeparableCubic::random(2, 0).unwrap();
        let cfg = DiscoveryConfig { directions: Some(3), ..DiscoveryConfig::default() };
        assert!(discover_directions(&g, &cfg).is_err());
    }
}
