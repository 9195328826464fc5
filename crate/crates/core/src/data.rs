//! Procedural square-sprite datasets with independent, known factors of variation.
//!
//! Every factor takes values in `[0, 1]` and drives one attribute of one object:
//! horizontal or vertical position, hue on a smooth color wheel, or size. Attributes not
//! driven by a factor stay at the spec's fixed values. Squares are anti-aliased by exact
//! pixel coverage, so images vary smoothly with every factor.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const BACKGROUND: f64 = -0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantic {
    X,
    Y,
    Hue,
    Size,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub semantic: Semantic,
    pub object: usize,
}

/// Fixed attributes of an object, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectDefaults {
    pub x: f64,
    pub y: f64,
    pub hue: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub factors: Vec<Factor>,
    pub objects: Vec<ObjectDefaults>,
    pub side: usize,
    /// Latent size the spec is meant to be paired with.
    pub suggested_latent_dim: usize,
}

/// Names accepted by [`FactorSpec::builtin`].
pub const BUILTIN_SPECS: &[&str] = &["simple-4factor", "complex-2object", "1fov", "2factor", "underparam"];

fn factor(name: &str, semantic: Semantic, object: usize) -> Factor {
    Factor { name: name.to_string(), semantic, object }
}

const CENTERED: ObjectDefaults = ObjectDefaults { x: 0.5, y: 0.5, hue: 0.0, size: 1.0 };

impl FactorSpec {
    pub fn builtin(name: &str) -> Result<Self> {
        use Semantic::*;
        let (factors, objects, latent) = match name {
            "simple-4factor" => (
                vec![factor("x", X, 0), factor("y", Y, 0), factor("hue", Hue, 0), factor("size", Size, 0)],
                vec![CENTERED],
                6,
            ),
            "complex-2object" => (
                vec![
                    factor("x0", X, 0),
                    factor("y0", Y, 0),
                    factor("hue0", Hue, 0),
                    factor("x1", X, 1),
                    factor("y1", Y, 1),
                    factor("hue1", Hue, 1),
                ],
                vec![ObjectDefaults { size: 0.3, ..CENTERED }, ObjectDefaults { size: 0.3, hue: 0.5, ..CENTERED }],
                8,
            ),
            "1fov" => (vec![factor("x", X, 0)], vec![ObjectDefaults { size: 0.5, ..CENTERED }], 2),
            "2factor" => {
                (vec![factor("x", X, 0), factor("hue", Hue, 0)], vec![ObjectDefaults { size: 0.5, ..CENTERED }], 6)
            }
            "underparam" => {
                (vec![factor("x", X, 0), factor("hue", Hue, 0)], vec![ObjectDefaults { size: 0.5, ..CENTERED }], 1)
            }
            other => {
                return Err(Error::contract(format!("unknown dataset {other:?}; expected one of {BUILTIN_SPECS:?}")))
            }
        };
        Ok(FactorSpec { name: name.to_string(), factors, objects, side: 16, suggested_latent_dim: latent })
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn observation_dim(&self) -> usize {
        self.side * self.side * CHANNELS
    }

    fn size_range(&self) -> (f64, f64) {
        let s = self.side as f64;
        (0.1875 * s, 0.4375 * s)
    }

    fn center_range(&self) -> (f64, f64) {
        let margin = 1.0 + self.size_range().1 / 2.0;
        (margin, self.side as f64 - margin)
    }

    /// Renders an observation as `side·side·3` values in `[-1, 1]`, row-major HWC.
    pub fn render(&self, factors: &[f64]) -> Result<Tensor> {
        if factors.len() != self.factors.len() {
            return Err(Error::contract(format!(
                "{} expects {} factors, got {}",
                self.name,
                self.factors.len(),
                factors.len()
            )));
        }
        if let Some((f, v)) = self.factors.iter().zip(factors).find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("factor {} = {v} outside [0, 1]", f.name)));
        }
        let mut objects = self.objects.clone();
        for (f, &v) in self.factors.iter().zip(factors) {
            let o = &mut objects[f.object];
            match f.semantic {
                Semantic::X => o.x = v,
                Semantic::Y => o.y = v,
                Semantic::Hue => o.hue = v,
                Semantic::Size => o.size = v,
            }
        }
        let side = self.side;
        let mut img = vec![BACKGROUND; self.observation_dim()];
        let (smin, smax) = self.size_range();
        let (cmin, cmax) = self.center_range();
        for o in &objects {
            let half = 0.5 * (smin + o.size * (smax - smin));
            let cx = cmin + o.x * (cmax - cmin);
            let cy = cmin + o.y * (cmax - cmin);
            let color = hue_to_rgb(o.hue);
            for py in 0..side {
                let cov_y = overlap(py as f64, cy - half, cy + half);
                if cov_y == 0.0 {
                    continue;
                }
                for px in 0..side {
                    let cov = cov_y * overlap(px as f64, cx - half, cx + half);
                    if cov == 0.0 {
                        continue;
                    }
                    let base = (py * side + px) * CHANNELS;
                    for c in 0..CHANNELS {
                        let cur = img[base + c];
                        img[base + c] = cur + cov * (color[c] - cur);
                    }
                }
            }
        }
        Ok(Tensor::vector(img))
    }
}

/// Length of `[p, p + 1] ∩ [lo, hi]`.
fn overlap(p: f64, lo: f64, hi: f64) -> f64 {
    ((p + 1.0).min(hi) - p.max(lo)).max(0.0)
}

/// Fraction of the color wheel covered by hue values `0..=1`. Less than a full turn, so
/// distinct hues always render as distinct colors.
pub const HUE_SPAN: f64 = 2.0 / 3.0;

/// Smooth cosine color wheel mapped to `[-1, 1]`; hue 0 is red-dominant, hue 1 blue.
pub fn hue_to_rgb(hue: f64) -> [f64; 3] {
    let angle = HUE_SPAN * hue;
    let ch = |shift: f64| (TAU * (angle - shift)).cos();
    [ch(0.0), ch(1.0 / 3.0), ch(2.0 / 3.0)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub factors: Vec<f64>,
    pub observation: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: FactorSpec,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub toolkit_version: String,
    pub spec: FactorSpec,
    pub seed: u64,
    pub count: usize,
}

/// `n` samples with factors i.i.d. uniform on `[0, 1]`.
pub fn sample_dataset(spec: &FactorSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract("dataset needs at least one sample"));
    }
    let mut rng = rng::stream(seed, streams::DATA);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let factors: Vec<f64> = (0..spec.num_factors()).map(|_| rng.random::<f64>()).collect();
        let observation = spec.render(&factors)?;
        samples.push(Sample { factors, observation });
    }
    Ok(Dataset { spec: spec.clone(), seed, samples })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[indices.len(), observation_dim]`.
    pub fn observations(&self, indices: &[usize]) -> Result<Tensor> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.samples[i].observation.data()).collect();
        Tensor::from_rows(&rows)
    }

    pub fn factor_matrix(&self, indices: &[usize]) -> Result<Tensor> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.samples[i].factors.as_slice()).collect();
        Tensor::from_rows(&rows)
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            toolkit_version: crate::VERSION.to_string(),
            spec: self.spec.clone(),
            seed: self.seed,
            count: self.samples.len(),
        }
    }

    /// Writes `manifest.json`, `factors.csv` and `images/{index:05}.ppm` under `dir`.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut written = Vec::with_capacity(self.len() + 2);

        let manifest = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes") + "\n";
        fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
        written.push(manifest);

        let mut csv = String::from("index,");
        csv.push_str(&self.spec.factors.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(","));
        csv.push('\n');
        for (i, s) in self.samples.iter().enumerate() {
            let _ = write!(csv, "{i}");
            for v in &s.factors {
                let _ = write!(csv, ",{v:?}");
            }
            csv.push('\n');
        }
        let factors = dir.join("factors.csv");
        fs::write(&factors, csv).map_err(|e| Error::io(&factors, e))?;
        written.push(factors);

        for (i, s) in self.samples.iter().enumerate() {
            let path = images.join(format!("{i:05}.ppm"));
            fs::write(&path, observation_ppm(&self.spec, &s.observation)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }

    /// Regenerates a dataset from an exported manifest alone.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        sample_dataset(&m.spec, m.count, m.seed)
    }
}

/// Binary PPM of an observation, `[-1, 1]` mapped to `[0, 255]`.
pub fn observation_ppm(spec: &FactorSpec, obs: &Tensor) -> Vec<u8> {
    let mut bytes = format!("P6\n{0} {0}\n255\n", spec.side).into_bytes();
    bytes.extend(obs.data().iter().map(|v| (127.5 * (v + 1.0)).round().clamp(0.0, 255.0) as u8));
    bytes
}
