//! Activeness of latent components and perceptual path length.
//!
//! Path length here uses squared pixel L2 distance, so absolute values are only
//! comparable between models evaluated with this toolkit.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::DifferentiableFunction;
use crate::rng::{self, streams};
use crate::tensor::Tensor;

/// Latent prior. Components are independent and identically distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    #[default]
    StandardNormal,
}

impl Prior {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Prior::StandardNormal => rng.sample(StandardNormal),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Prior::StandardNormal => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredL2,
}

impl Distance {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::SquaredL2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }
}

/// Rows evaluated per generator call.
const CHUNK: usize = 256;

/// Sample variance of each column, shifted by the first row so identical rows give exactly 0.
fn column_variances(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len() as f64;
    let first = rows[0];
    (0..first.len())
        .map(|j| {
            let (mut s, mut s2) = (0.0, 0.0);
            for r in rows {
                let d = r[j] - first[j];
                s += d;
                s2 += d * d;
            }
            ((s2 - s * s / n) / (n - 1.0)).max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivenessReport {
    pub scores: Vec<f64>,
    pub base_samples: usize,
    pub sweep_samples: usize,
    pub seed: u64,
}

impl ActivenessReport {
    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }

    /// Components scoring below `fraction` of the most active one.
    pub fn inactive(&self, fraction: f64) -> usize {
        let m = self.max();
        self.scores.iter().filter(|&&s| s < fraction * m).count()
    }
}

/// Mean over `base_samples` latents of the per-output variance of `G(z)` as component
/// `component` is redrawn `sweep_samples` times, averaged over output elements.
pub fn activeness(
    f: &dyn DifferentiableFunction,
    component: usize,
    base_samples: usize,
    sweep_samples: usize,
    prior: Prior,
    seed: u64,
) -> Result<f64> {
    let dim = f.input_dim();
    if component >= dim {
        return Err(Error::contract(format!("component {component} out of range for {dim} latents")));
    }
    if base_samples < 2 || sweep_samples < 2 {
        return Err(Error::contract("activeness needs at least 2 base and 2 sweep samples"));
    }
    let per_base = (0..base_samples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::sample_stream(seed, streams::METRICS, b as u64);
            let base: Vec<f64> = (0..dim).map(|_| prior.sample(&mut rng)).collect();
            let mut rows = Vec::with_capacity(sweep_samples * dim);
            for _ in 0..sweep_samples {
                let mut z = base.clone();
                z[component] = prior.sample(&mut rng);
                rows.extend(z);
            }
            let out = f.eval_values(&Tensor::new(vec![sweep_samples, dim], rows)?)?;
            let out_rows: Vec<&[f64]> = (0..sweep_samples).map(|i| out.row(i)).collect();
            let var = column_variances(&out_rows);
            Ok(var.iter().sum::<f64>() / var.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_base.iter().sum::<f64>() / base_samples as f64)
}

/// Activeness of every component; component `i` uses seed `seed + i`.
pub fn activeness_report(
    f: &dyn DifferentiableFunction,
    base_samples: usize,
    sweep_samples: usize,
    prior: Prior,
    seed: u64,
) -> Result<ActivenessReport> {
    let scores = (0..f.input_dim())
        .map(|i| activeness(f, i, base_samples, sweep_samples, prior, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivenessReport { scores, base_samples, sweep_samples, seed })
}

/// Angles closer than this to 0 fall back to linear interpolation; closer than this to π
/// are rejected.
pub const SLERP_ANGLE_TOL: f64 = 1e-6;

/// Spherical interpolation `sin((1−α)Ω)/sin Ω · a + sin(αΩ)/sin Ω · b`.
pub fn slerp(a: &[f64], b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::contract("slerp endpoints differ in length"));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("slerp endpoint is the zero vector".into()));
    }
    let cos = (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega > std::f64::consts::PI - SLERP_ANGLE_TOL {
        return Err(Error::Degenerate("slerp endpoints are antiparallel".into()));
    }
    if omega < SLERP_ANGLE_TOL {
        return Ok(a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect());
    }
    let s = omega.sin();
    let (wa, wb) = (((1.0 - alpha) * omega).sin() / s, (alpha * omega).sin() / s);
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplConfig {
    pub alpha: f64,
    pub samples: usize,
    pub distance: Distance,
    pub prior: Prior,
}

impl Default for PplConfig {
    fn default() -> Self {
        PplConfig { alpha: 1e-4, samples: 10_000, distance: Distance::SquaredL2, prior: Prior::StandardNormal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub value: f64,
    pub used: usize,
    pub skipped: usize,
}

/// `E[d(G(z₁), G(slerp(z₁, z₂; α))) / α²]` over pairs from the prior.
pub fn ppl(f: &dyn DifferentiableFunction, config: &PplConfig, seed: u64) -> Result<PplReport> {
    if !(config.alpha > 0.0) || config.samples == 0 {
        return Err(Error::contract("path length needs alpha > 0 and at least one sample"));
    }
    let dim = f.input_dim();
    let starts: Vec<usize> = (0..config.samples).step_by(CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(config.samples);
            let mut firsts = Vec::new();
            let mut moved = Vec::new();
            let mut skipped = 0;
            for i in start..end {
                let mut rng = rng::sample_stream(seed, streams::METRICS, i as u64);
                let z1: Vec<f64> = (0..dim).map(|_| config.prior.sample(&mut rng)).collect();
                let z2: Vec<f64> = (0..dim).map(|_| config.prior.sample(&mut rng)).collect();
                match slerp(&z1, &z2, config.alpha) {
                    Ok(z) => {
                        firsts.extend(z1);
                        moved.extend(z);
                    }
                    Err(Error::Degenerate(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            let n = firsts.len() / dim;
            if n == 0 {
                return Ok((Vec::new(), skipped));
            }
            let a = f.eval_values(&Tensor::new(vec![n, dim], firsts)?)?;
            let b = f.eval_values(&Tensor::new(vec![n, dim], moved)?)?;
            let a2 = config.alpha * config.alpha;
            let d = (0..n).map(|r| config.distance.eval(a.row(r), b.row(r)) / a2).collect();
            Ok((d, skipped))
        })
        .collect::<Result<Vec<(Vec<f64>, usize)>>>()?;
    let mut total = 0.0;
    let (mut used, mut skipped) = (0, 0);
    for (d, s) in chunks {
        used += d.len();
        skipped += s;
        total += d.iter().sum::<f64>();
    }
    if used == 0 {
        return Err(Error::Degenerate("every path-length sample pair was degenerate".into()));
    }
    Ok(PplReport { value: total / used as f64, used, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{BetaCubic, SeparableCubic};

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), vec![1.0, 0.0]);
        let end = slerp(&a, &b, 1.0).unwrap();
        assert!((end[0]).abs() < 1e-15 && (end[1] - 1.0).abs() < 1e-15);
        let mid = slerp(&a, &b, 0.5).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((mid[0] - r).abs() < 1e-15 && (mid[1] - r).abs() < 1e-15);
    }

    #[test]
    fn slerp_degenerate_cases() {
        assert!(matches!(slerp(&[1.0, 0.0], &[-1.0, 0.0], 0.5), Err(Error::Degenerate(_))));
        assert!(matches!(slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5), Err(Error::Degenerate(_))));
        // parallel endpoints interpolate linearly
        assert_eq!(slerp(&[1.0, 0.0], &[3.0, 0.0], 0.5).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn activeness_of_unused_component_is_exactly_zero() {
        // G(z) = (z₁ ... ) through a linear map that ignores z₂
        let f = SeparableCubic::new(vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let s1 = activeness(&f, 0, 8, 8, Prior::StandardNormal, 1).unwrap();
        let s2 = activeness(&f, 1, 8, 8, Prior::StandardNormal, 1).unwrap();
        assert!(s1 > 0.0);
        assert_eq!(s2, 0.0);
        assert!(activeness(&f, 2, 8, 8, Prior::StandardNormal, 1).is_err());
        assert!(activeness(&f, 0, 1, 8, Prior::StandardNormal, 1).is_err());
    }

    #[test]
    fn activeness_scales_with_square_of_gain() {
        let f = SeparableCubic::new(vec![2.0], vec![0.0], vec![0.0]).unwrap();
        let s = activeness(&f, 0, 10_000, 2, Prior::StandardNormal, 3).unwrap();
        assert!((s - 4.0).abs() / 4.0 < 0.05, "{s}");
    }

    #[test]
    fn constant_function_has_zero_scores_and_ppl() {
        let f = SeparableCubic::new(vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]).unwrap();
        let r = activeness_report(&f, 4, 4, Prior::StandardNormal, 0).unwrap();
        assert_eq!(r.scores, vec![0.0; 3]);
        let p = ppl(&f, &PplConfig { samples: 100, ..Default::default() }, 0).unwrap();
        assert_eq!(p.value, 0.0);
        assert_eq!(p.used, 100);
    }

    #[test]
    fn ppl_grows_with_beta() {
        let cfg = PplConfig { samples: 2_000, ..Default::default() };
        let values: Vec<f64> =
            [1.0, 10.0, 100.0].iter().map(|&b| ppl(&BetaCubic::new(b), &cfg, 5).unwrap().value).collect();
        assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
    }

    #[test]
    fn ppl_is_reproducible() {
        let f = BetaCubic::new(2.0);
        let cfg = PplConfig { samples: 600, ..Default::default() };
        assert_eq!(ppl(&f, &cfg, 9).unwrap(), ppl(&f, &cfg, 9).unwrap());
    }
}
