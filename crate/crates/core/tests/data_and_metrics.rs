use hessian_penalty::autodiff::{Tape, Var};
use hessian_penalty::data::{hue_to_rgb, sample_dataset, FactorSpec, CHANNELS};
use hessian_penalty::functions::{BetaCubic, DifferentiableFunction, Evaluation};
use hessian_penalty::metrics::{activeness, activeness_report, ppl, slerp, PplConfig, Prior};
use hessian_penalty::{Result, Tensor};
use proptest::prelude::*;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Solves `(XᵀX + ridge·I) w = Xᵀy` by Cholesky.
fn ridge_fit(x: &[Vec<f64>], y: &[f64], ridge: f64) -> Vec<f64> {
    let d = x[0].len();
    let mut a = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..d {
            rhs[i] += row[i] * t;
            for j in 0..=i {
                a[i * d + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        a[i * d + i] += ridge;
    }
    // lower-triangular factor in place
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        let l = s.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l;
        }
    }
    let mut w = rhs;
    for i in 0..d {
        for k in 0..i {
            w[i] -= a[i * d + k] * w[k];
        }
        w[i] /= a[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            w[i] -= a[k * d + i] * w[k];
        }
        w[i] /= a[i * d + i];
    }
    w
}

#[test]
fn factors_are_uncorrelated() {
    for name in ["2factor", "simple-4factor"] {
        let spec = FactorSpec::builtin(name).unwrap();
        let ds = sample_dataset(&spec, 1000, 3).unwrap();
        let k = spec.num_factors();
        let cols: Vec<Vec<f64>> = (0..k).map(|j| ds.samples.iter().map(|s| s.factors[j]).collect()).collect();
        for i in 0..k {
            for j in i + 1..k {
                let r = pearson(&cols[i], &cols[j]);
                assert!(r.abs() <= 0.1, "{name}: factors {i},{j} correlation {r}");
            }
        }
    }
}

/// Fixed quadratic feature map: `m` random projections of the pixels, their pairwise
/// products and a constant. Pixel values are coverage times color, so hue needs at least
/// second-order terms to be read off independently of size.
fn quadratic_features(obs: &[f64], proj: &Tensor) -> Vec<f64> {
    let m = proj.shape()[1];
    let p: Vec<f64> = (0..m).map(|j| obs.iter().enumerate().map(|(i, x)| x * proj.at(i, j)).sum()).collect();
    let mut f = p.clone();
    for i in 0..m {
        for j in i..m {
            f.push(p[i] * p[j]);
        }
    }
    f.push(1.0);
    f
}

#[test]
fn factors_are_recoverable_by_least_squares() {
    let spec = FactorSpec::builtin("simple-4factor").unwrap();
    let ds = sample_dataset(&spec, 5000, 8).unwrap();
    let proj = hessian_penalty::rng::gaussian_matrix(
        &mut hessian_penalty::rng::stream(0, 500),
        spec.observation_dim(),
        40,
        1.0 / (spec.observation_dim() as f64).sqrt(),
    );
    let features: Vec<Vec<f64>> = ds.samples.iter().map(|s| quadratic_features(s.observation.data(), &proj)).collect();
    let (train, test) = features.split_at(4000);
    for j in 0..spec.num_factors() {
        let y: Vec<f64> = ds.samples.iter().map(|s| s.factors[j]).collect();
        let (ytr, yte) = y.split_at(4000);
        let w = ridge_fit(train, ytr, 1e-6);
        let pred: Vec<f64> = test.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        let mean = yte.iter().sum::<f64>() / yte.len() as f64;
        let ss_res: f64 = pred.iter().zip(yte).map(|(p, t)| (p - t).powi(2)).sum();
        let ss_tot: f64 = yte.iter().map(|t| (t - mean).powi(2)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 >= 0.9, "factor {}: held-out R² {r2}", spec.factors[j].name);
    }
}

#[test]
fn channel_means_are_moderate() {
    for name in ["simple-4factor", "complex-2object", "1fov"] {
        let spec = FactorSpec::builtin(name).unwrap();
        let ds = sample_dataset(&spec, 500, 1).unwrap();
        let mut sums = [0.0; CHANNELS];
        let mut count = 0.0;
        for s in &ds.samples {
            for px in s.observation.data().chunks(CHANNELS) {
                for c in 0..CHANNELS {
                    sums[c] += px[c];
                }
                count += 1.0;
            }
            assert!(s.observation.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        for (c, s) in sums.iter().enumerate() {
            let m = s / count;
            assert!((-0.5..=0.5).contains(&m), "{name} channel {c} mean {m}");
        }
    }
}

#[test]
fn hue_endpoints_are_distinct_colors() {
    let (a, b) = (hue_to_rgb(0.0), hue_to_rgb(1.0));
    assert!(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) > 0.5);
    assert_eq!(a[0], 1.0);
}

#[test]
fn one_factor_dataset_varies_along_x_only() {
    let spec = FactorSpec::builtin("1fov").unwrap();
    let ds = sample_dataset(&spec, 50, 2).unwrap();
    let moved = spec.render(&[0.0]).unwrap();
    let other = spec.render(&[1.0]).unwrap();
    assert!(moved.data().iter().zip(other.data()).any(|(a, b)| a != b));
    for s in &ds.samples {
        assert_eq!(s.observation, spec.render(&s.factors).unwrap());
    }
}

/// `G(z) = zW`.
struct Linear {
    w: Tensor,
}

impl DifferentiableFunction for Linear {
    fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    fn output_dim(&self) -> usize {
        self.w.shape()[1]
    }

    fn evaluate(&self, tape: &mut Tape, z: Var) -> Result<Evaluation> {
        let w = tape.constant(self.w.clone());
        Ok(Evaluation::output_only(tape.matmul(z, w)?))
    }
}

#[test]
fn activeness_of_a_single_used_component() {
    let g = Linear { w: Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap() };
    let report = activeness_report(&g, 32, 16, Prior::StandardNormal, 4).unwrap();
    assert!(report.scores[0] > 0.0);
    assert_eq!(report.scores[1], 0.0);
    assert_eq!(report.inactive(0.1), 1);
}

#[test]
fn activeness_scales_with_the_square_of_the_gain() {
    // G(z) = 2z₁: each sweep variance estimates 4·Var(prior) = 4
    let g = Linear { w: Tensor::from_rows(&[[2.0]]).unwrap() };
    let score = activeness(&g, 0, 10_000, 16, Prior::StandardNormal, 0).unwrap();
    assert!((score - 4.0).abs() <= 0.05 * 4.0, "{score}");
}

#[test]
fn constant_function_is_inactive_and_flat() {
    let g = Linear { w: Tensor::zeros(&[3, 2]) };
    let report = activeness_report(&g, 8, 4, Prior::StandardNormal, 0).unwrap();
    assert!(report.scores.iter().all(|&s| s == 0.0));
    let p = ppl(&g, &PplConfig { samples: 100, ..PplConfig::default() }, 0).unwrap();
    assert_eq!(p.value, 0.0);
}

#[test]
fn activeness_is_permutation_equivariant() {
    let w = Tensor::from_rows(&[[1.0, 0.5], [0.0, 2.0], [0.3, 0.0]]).unwrap();
    let swapped = Tensor::from_rows(&[[0.3, 0.0], [0.0, 2.0], [1.0, 0.5]]).unwrap();
    let a = activeness_report(&Linear { w }, 64, 16, Prior::StandardNormal, 1).unwrap();
    let b = activeness_report(&Linear { w: swapped }, 64, 16, Prior::StandardNormal, 1).unwrap();
    for (x, y) in [(0, 2), (1, 1), (2, 0)] {
        assert!((a.scores[x] - b.scores[y]).abs() <= 0.15 * a.scores[x].max(b.scores[y]));
    }
}

#[test]
fn slerp_midpoint_of_orthogonal_vectors() {
    let m = slerp(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    assert!((m[0] - r).abs() < 1e-15 && (m[1] - r).abs() < 1e-15);
    assert!(slerp(&[1.0, 0.0], &[-1.0, 0.0], 0.5).is_err());
}

#[test]
fn ppl_of_a_linear_map_is_stable_across_seeds() {
    // eight latents: the slerp tangent blows up near antiparallel pairs, and the spread of
    // the path length is only finite once the latent sphere is large enough
    let g = Linear { w: hessian_penalty::rng::gaussian_matrix(&mut hessian_penalty::rng::stream(2, 501), 8, 5, 1.0) };
    let cfg = PplConfig::default();
    let values: Vec<f64> = (0..3).map(|s| ppl(&g, &cfg, s).unwrap().value).collect();
    assert!(values.iter().all(|v| v.is_finite() && *v > 0.0));
    let (lo, hi) = values.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi <= 1.1 * lo, "{values:?}");
}

#[test]
fn ppl_grows_with_beta() {
    let cfg = PplConfig { samples: 2000, ..PplConfig::default() };
    let vals: Vec<f64> = [1.0, 10.0, 100.0].iter().map(|&b| ppl(&BetaCubic::new(b), &cfg, 3).unwrap().value).collect();
    assert!(vals[0] < vals[1] && vals[1] < vals[2], "{vals:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn slerp_endpoints(a in prop::collection::vec(-3.0f64..3.0, 3), b in prop::collection::vec(-3.0f64..3.0, 3)) {
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(na > 1e-3 && nb > 1e-3);
        let cos = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        prop_assume!(cos > -0.999);
        let s0 = slerp(&a, &b, 0.0).unwrap();
        let s1 = slerp(&a, &b, 1.0).unwrap();
        for i in 0..3 {
            prop_assert!((s0[i] - a[i]).abs() <= 1e-9 * (1.0 + a[i].abs()));
            prop_assert!((s1[i] - b[i]).abs() <= 1e-9 * (1.0 + b[i].abs()));
        }
    }

    #[test]
    fn rendering_is_deterministic_and_bounded(f in prop::collection::vec(0.0f64..=1.0, 4)) {
        let spec = FactorSpec::builtin("simple-4factor").unwrap();
        let a = spec.render(&f).unwrap();
        prop_assert_eq!(&a, &spec.render(&f).unwrap());
        prop_assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
