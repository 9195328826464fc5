//! Brute-force references for the estimator: full finite-difference Hessians,
//! exhaustive Rademacher enumeration and diagonality statistics.

use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::functions::{random_symmetric, DifferentiableFunction, Quadratic};
use crate::penalty::{estimate_batch, exact_offdiag_penalty, PenaltyConfig};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

/// Largest dimension [`enumerate_variance`] accepts (2ⁿ probe vectors).
pub const MAX_ENUMERATION_DIM: usize = 20;

/// One Hessian per output component, taken at `z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianSet {
    pub z: Vec<f64>,
    pub epsilon: f64,
    #[serde(skip)]
    pub matrices: Vec<Tensor>,
    /// Largest `|Ĥᵢⱼ − Ĥⱼᵢ|` of the raw estimates before symmetrization.
    pub max_asymmetry: f64,
}

impl HessianSet {
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Output indices ordered by decreasing off-diagonal mass (ties by index).
    pub fn ranked_by_penalty(&self) -> Result<Vec<(usize, f64)>> {
        let mut ranked = self
            .matrices
            .iter()
            .enumerate()
            .map(|(i, h)| Ok((i, exact_offdiag_penalty(h)?)))
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(ranked)
    }
}

/// Finite-difference Hessian of every output component of `f` at `z`.
///
/// Diagonal: `(G(z + εeᵢ) − 2G(z) + G(z − εeᵢ)) / ε²`.
/// Off-diagonal: the four-corner central stencil
/// `(G(+,+) − G(+,−) − G(−,+) + G(−,−)) / 4ε²` over `z ± εeᵢ ± εeⱼ`.
/// All `1 + 2n + 2n(n−1)` inputs are evaluated in one batch.
pub fn exact_hessian_fd(f: &dyn DifferentiableFunction, z: &[f64], epsilon: f64) -> Result<HessianSet> {
    let n = z.len();
    if n != f.input_dim() {
        return Err(Error::contract(format!("z has {n} components, function expects {}", f.input_dim())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    const CORNERS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

    let mut rows: Vec<f64> = Vec::with_capacity((1 + 2 * n + 4 * pairs.len()) * n);
    rows.extend_from_slice(z);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut r = z.to_vec();
            r[i] += s * epsilon;
            rows.extend(r);
        }
    }
    for &(i, j) in &pairs {
        for (si, sj) in CORNERS {
            let mut r = z.to_vec();
            r[i] += si * epsilon;
            r[j] += sj * epsilon;
            rows.extend(r);
        }
    }
    let count = rows.len() / n;
    let out = f.eval_values(&Tensor::new(vec![count, n], rows)?)?;
    if !out.all_finite() {
        return Err(Error::Numeric { op: "exact_hessian_fd", detail: "non-finite evaluation".into() });
    }
    let m = out.dims2()?.1;
    let e2 = epsilon * epsilon;
    let mut matrices = Vec::with_capacity(m);
    let mut max_asymmetry: f64 = 0.0;
    for c in 0..m {
        let g = |row: usize| out.at(row, c);
        let mut h = Tensor::zeros(&[n, n]);
        for i in 0..n {
            h.set(i, i, (g(1 + 2 * i) - 2.0 * g(0) + g(2 + 2 * i)) / e2);
        }
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let base = 1 + 2 * n + 4 * p;
            let (pp, pm, mp, mm) = (g(base), g(base + 1), g(base + 2), g(base + 3));
            // the (j, i) stencil visits the mixed corners in the opposite order
            let hij = (pp - pm - mp + mm) / (4.0 * e2);
            let hji = (pp - mp - pm + mm) / (4.0 * e2);
            max_asymmetry = max_asymmetry.max((hij - hji).abs());
            let sym = 0.5 * (hij + hji);
            h.set(i, j, sym);
            h.set(j, i, sym);
        }
        matrices.push(h);
    }
    Ok(HessianSet { z: z.to_vec(), epsilon, matrices, max_asymmetry })
}

/// Exact population variance of `vᵀHv` over all 2ⁿ Rademacher vectors.
pub fn enumerate_variance(h: &Tensor) -> Result<f64> {
    let (n, c) = h.dims2()?;
    if n != c {
        return Err(Error::contract(format!("expected a square matrix, got {n}x{c}")));
    }
    if n > MAX_ENUMERATION_DIM {
        return Err(Error::contract(format!(
            "enumeration over 2^{n} probes refused; dimension limit is {MAX_ENUMERATION_DIM}"
        )));
    }
    let total = 1usize << n;
    let mut v = vec![0.0; n];
    let mut values = Vec::with_capacity(total);
    for mask in 0..total {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
        }
        let mut q = 0.0;
        for i in 0..n {
            let row = h.row(i);
            let s: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            q += v[i] * s;
        }
        values.push(q);
    }
    let mean = values.iter().sum::<f64>() / total as f64;
    Ok(values.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / total as f64)
}

/// One random matrix of the enumeration suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumerationCase {
    pub dim: usize,
    pub matrix_seed: u64,
    pub enumerated: f64,
    /// `2·Σ_{i≠j} H²ᵢⱼ`.
    pub closed_form: f64,
    pub rel_error: f64,
}

/// Compares exhaustive enumeration with the closed form for `trials` random symmetric
/// matrices, cycling the dimension through `dims`. Trial `t` uses matrix seed `seed + t`.
pub fn enumeration_suite(dims: RangeInclusive<usize>, trials: usize, seed: u64) -> Result<Vec<EnumerationCase>> {
    let dims: Vec<usize> = dims.collect();
    if dims.is_empty() || dims[0] == 0 {
        return Err(Error::contract("dimension range must be nonempty and start at 1 or more"));
    }
    (0..trials)
        .map(|t| {
            let dim = dims[t % dims.len()];
            let matrix_seed = seed.wrapping_add(t as u64);
            let h = random_symmetric(dim, matrix_seed);
            let enumerated = enumerate_variance(&h)?;
            let closed_form = 2.0 * exact_offdiag_penalty(&h)?;
            let rel_error =
                if closed_form == 0.0 { enumerated.abs() } else { (enumerated - closed_form).abs() / closed_form };
            Ok(EnumerationCase { dim, matrix_seed, enumerated, closed_form, rel_error })
        })
        .collect()
}

/// Monte-Carlo mean of the estimator on one quadratic, against its exact expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasednessCase {
    pub dim: usize,
    pub matrix_seed: u64,
    pub trials: usize,
    pub expected: f64,
    pub mean: f64,
    pub std_error: f64,
    /// `|mean − expected| / std_error`.
    pub deviation: f64,
}

const MC_CHUNK: usize = 4096;

/// Runs the penalty estimator `trials` times on `½zᵀHz` for `matrices` random symmetric
/// `H` (matrix seed `seed + m`), each estimate with fresh probes.
pub fn unbiasedness_check(
    dim: usize,
    matrices: usize,
    trials: usize,
    config: &PenaltyConfig,
    seed: u64,
) -> Result<Vec<UnbiasednessCase>> {
    if trials < 2 {
        return Err(Error::contract("unbiasedness check needs at least 2 trials"));
    }
    (0..matrices)
        .map(|m| {
            let matrix_seed = seed.wrapping_add(m as u64);
            let h = random_symmetric(dim, matrix_seed);
            let expected = enumerate_variance(&h)?;
            let f = Quadratic::new(h)?;
            let mut values = Vec::with_capacity(trials);
            for (c, start) in (0..trials).step_by(MC_CHUNK).enumerate() {
                let rows = MC_CHUNK.min(trials - start);
                let z = Tensor::zeros(&[rows, dim]);
                let mut rng = rng::sample_stream(matrix_seed, streams::PROBES, c as u64);
                values.extend(estimate_batch(&f, &z, config, &mut rng)?);
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let std_error = (var / n).sqrt();
            let deviation = if std_error > 0.0 { (mean - expected).abs() / std_error } else { (mean - expected).abs() };
            Ok(UnbiasednessCase { dim, matrix_seed, trials, expected, mean, std_error, deviation })
        })
        .collect()
}

fn serialize_ratio<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalityReport {
    /// Fraction of matrices whose largest-magnitude entry is on the diagonal.
    pub d_percent: f64,
    /// Mean |diagonal entry| over mean |off-diagonal entry|, pooled over all matrices.
    #[serde(serialize_with = "serialize_ratio")]
    pub d_ratio: f64,
    /// Set when every off-diagonal entry is zero; `d_ratio` is then `+inf`.
    pub d_ratio_infinite: bool,
    pub matrices: usize,
}

/// Table-style diagonality statistics of a collection of square matrices.
/// A tie for the largest magnitude counts as diagonal.
pub fn diagonality_metrics<'a, I>(matrices: I) -> Result<DiagonalityReport>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    let mut count = 0usize;
    let mut diag_wins = 0usize;
    let (mut diag_sum, mut diag_n) = (0.0, 0usize);
    let (mut off_sum, mut off_n) = (0.0, 0usize);
    for h in matrices {
        let (n, c) = h.dims2()?;
        if n != c {
            return Err(Error::contract(format!("expected square matrices, got {n}x{c}")));
        }
        count += 1;
        let (mut best_diag, mut best_off) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let a = h.at(i, j).abs();
                if i == j {
                    best_diag = best_diag.max(a);
                    diag_sum += a;
                    diag_n += 1;
                } else {
                    best_off = best_off.max(a);
                    off_sum += a;
                    off_n += 1;
                }
            }
        }
        if best_diag >= best_off {
            diag_wins += 1;
        }
    }
    if count == 0 {
        return Err(Error::contract("diagonality metrics need at least one matrix"));
    }
    let diag_mean = diag_sum / diag_n as f64;
    let off_mean = if off_n == 0 { 0.0 } else { off_sum / off_n as f64 };
    let (d_ratio, infinite) = if off_mean == 0.0 { (f64::INFINITY, true) } else { (diag_mean / off_mean, false) };
    Ok(DiagonalityReport {
        d_percent: diag_wins as f64 / count as f64,
        d_ratio,
        d_ratio_infinite: infinite,
        matrices: count,
    })
}

/// Pooled statistics over every matrix of every set.
pub fn diagonality_of_sets(sets: &[HessianSet]) -> Result<DiagonalityReport> {
    diagonality_metrics(sets.iter().flat_map(|s| s.matrices.iter()))
}

/// Writes a matrix as comma-separated rows with round-trip decimal precision.
pub fn write_matrix_csv(path: &Path, h: &Tensor) -> Result<()> {
    let (r, _) = h.dims2()?;
    let mut text = String::new();
    for i in 0..r {
        let row: Vec<String> = h.row(i).iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

/// Grayscale heatmap as binary PPM: zero maps to mid-gray, ±max|H| to white/black.
/// Each entry becomes a `cell`×`cell` block.
pub fn write_heatmap_ppm(path: &Path, h: &Tensor, cell: usize) -> Result<()> {
    let (r, c) = h.dims2()?;
    let cell = cell.max(1);
    let scale = h.max_abs();
    let (w, ht) = (c * cell, r * cell);
    let mut bytes = format!("P6\n{w} {ht}\n255\n").into_bytes();
    for y in 0..ht {
        for x in 0..w {
            let v = h.at(y / cell, x / cell);
            let t = if scale > 0.0 { v / scale } else { 0.0 };
            let g = (127.5 * (1.0 + t)).round().clamp(0.0, 255.0) as u8;
            bytes.extend_from_slice(&[g, g, g]);
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Exports the `top` outputs with the largest off-diagonal mass (all when `None`),
/// one CSV and one PPM per matrix, named `{prefix}_{output}.csv|ppm`.
pub fn export_hessian_heatmaps(
    set: &HessianSet,
    dir: &Path,
    prefix: &str,
    top: Option<usize>,
    cell: usize,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ranked = set.ranked_by_penalty()?;
    let take = top.unwrap_or(ranked.len()).min(ranked.len());
    let mut written = Vec::with_capacity(2 * take);
    for &(idx, _) in &ranked[..take] {
        let csv = dir.join(format!("{prefix}_{idx}.csv"));
        let ppm = dir.join(format!("{prefix}_{idx}.ppm"));
        write_matrix_csv(&csv, &set.matrices[idx])?;
        write_heatmap_ppm(&ppm, &set.matrices[idx], cell)?;
        written.push(csv);
        written.push(ppm);
    }
    Ok(written)
}
