//! Training loops: adversarial training with the penalty, a deterministic reconstruction
//! surrogate, the warm-up schedule, and unsupervised direction discovery.

mod directions;
mod gram_schmidt;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::data::{sample_dataset, Dataset, FactorSpec};
use crate::error::{Error, Result};
use crate::functions::DifferentiableFunction;
use crate::nets::{Checkpoint, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::penalty::{penalty_loss, PenaltyConfig};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

pub use directions::{
    best_alignment, discover_directions, Alignment, DirectionMatrix, DiscoveryConfig, DiscoveryRecord,
};
pub use gram_schmidt::{gram_schmidt, orthogonality_error, RANK_TOL};

/// Linear warm-up `λ·min(1, t/T)`.
pub fn warmup_weight(t: u64, warmup: u64, lambda: f64) -> f64 {
    if warmup == 0 {
        return lambda;
    }
    lambda * (t as f64 / warmup as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gan,
    Reconstruction,
    /// Adversarial training with the penalty weight forced to zero.
    Baseline,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(Mode::Gan),
            "reconstruction" => Ok(Mode::Reconstruction),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::contract(format!(
                "unknown training mode {other:?} (expected gan, reconstruction or baseline)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gan => "gan",
            Mode::Reconstruction => "reconstruction",
            Mode::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub warmup: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub penalty: PenaltyConfig,
    pub seed: u64,
    pub dataset: String,
    pub dataset_size: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Gan,
            lambda: 0.1,
            warmup: 500,
            steps: 2000,
            batch_size: 32,
            lr_g: 1e-3,
            lr_d: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            penalty: PenaltyConfig::default(),
            seed: 0,
            dataset: "simple-4factor".into(),
            dataset_size: 4096,
            latent_dim: 6,
            hidden: vec![32, 32, 32],
            disc_hidden: vec![32, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.warmup < 1 {
            return Err(Error::contract("warm-up horizon must be at least 1 step"));
        }
        if self.batch_size == 0 || self.dataset_size == 0 || self.latent_dim == 0 {
            return Err(Error::contract("batch size, dataset size and latent size must be positive"));
        }
        Adam::new(AdamConfig::new(self.lr_g, self.beta1, self.beta2))?;
        Adam::new(AdamConfig::new(self.lr_d, self.beta1, self.beta2))?;
        Ok(())
    }

    /// Penalty weight after applying the mode; baseline runs always use 0.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            Mode::Baseline => 0.0,
            _ => self.lambda,
        }
    }

    pub fn lambda_at(&self, t: u64) -> f64 {
        warmup_weight(t, self.warmup, self.effective_lambda())
    }
}

/// One training step's log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub lambda_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recon_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_ms: f64,
}

impl TrainRecord {
    fn new(step: u64, lambda_t: f64) -> Self {
        TrainRecord {
            step,
            lambda_t,
            d_loss: None,
            g_loss: None,
            recon_loss: None,
            penalty: None,
            error: None,
            wall_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

/// Factors paired with their rendered observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    /// `[batch, factors]`, each factor in `[0, 1]`.
    pub factors: Tensor,
    /// `[batch, observation_dim]`.
    pub observations: Tensor,
}

/// Generator, discriminator, their optimizers and the data and noise streams.
pub struct Trainer {
    config: TrainConfig,
    generator: Generator,
    discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    data: Dataset,
    data_rng: rng::Stream,
    latent_rng: rng::Stream,
    probe_rng: rng::Stream,
    step: u64,
}

fn finite(op: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric { op, detail: format!("loss is {v}") })
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = FactorSpec::builtin(&config.dataset)?;
        let gcfg = GeneratorConfig::new(config.latent_dim, config.hidden.clone(), spec.observation_dim())?;
        let generator = Generator::new(gcfg, config.seed)?;
        let dcfg = DiscriminatorConfig { input_dim: spec.observation_dim(), hidden: config.disc_hidden.clone() };
        let discriminator = Discriminator::new(dcfg, config.seed)?;
        Trainer::with_networks(config, generator, discriminator)
    }

    /// Starts from existing networks, e.g. a checkpoint being fine-tuned.
    pub fn with_networks(config: TrainConfig, generator: Generator, discriminator: Discriminator) -> Result<Self> {
        config.validate()?;
        let spec = FactorSpec::builtin(&config.dataset)?;
        if generator.config().output_dim != spec.observation_dim() || generator.config().latent_dim != config.latent_dim
        {
            return Err(Error::contract("generator shape does not match the training configuration"));
        }
        if config.mode == Mode::Reconstruction && config.latent_dim < spec.num_factors() {
            return Err(Error::contract(format!(
                "reconstruction needs at least {} latents for dataset {}",
                spec.num_factors(),
                spec.name
            )));
        }
        let data = sample_dataset(&spec, config.dataset_size, config.seed)?;
        Ok(Trainer {
            opt_g: Adam::new(AdamConfig::new(config.lr_g, config.beta1, config.beta2))?,
            opt_d: Adam::new(AdamConfig::new(config.lr_d, config.beta1, config.beta2))?,
            data_rng: rng::stream(config.seed, streams::DATA),
            latent_rng: rng::stream(config.seed, streams::LATENT),
            probe_rng: rng::stream(config.seed, streams::PROBES),
            config,
            generator,
            discriminator,
            data,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn sample_latents(&mut self, rows: usize) -> Tensor {
        let dim = self.config.latent_dim;
        let data = (0..rows * dim).map(|_| self.latent_rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(vec![rows, dim], data).expect("positive extents")
    }

    fn sample_indices(&mut self) -> Vec<usize> {
        let n = self.data.len();
        (0..self.config.batch_size).map(|_| self.data_rng.random_range(0..n)).collect()
    }

    pub fn real_batch(&mut self) -> Result<Tensor> {
        let idx = self.sample_indices();
        self.data.observations(&idx)
    }

    pub fn paired_batch(&mut self) -> Result<PairedBatch> {
        let idx = self.sample_indices();
        Ok(PairedBatch { factors: self.data.factor_matrix(&idx)?, observations: self.data.observations(&idx)? })
    }

    /// One discriminator update on the logistic loss, then one generator update on the
    /// non-saturating loss plus `λ_t` times the penalty of the same latents.
    pub fn gan_step(&mut self, real: &Tensor, t: u64) -> Result<TrainRecord> {
        let lambda = self.config.effective_lambda();
        let lambda_t = warmup_weight(t, self.config.warmup, lambda);
        let mut rec = TrainRecord::new(t, lambda_t);
        let batch = real.dims2()?.0;

        // discriminator
        let z_d = self.sample_latents(batch);
        let fake = self.generator.generate(&z_d)?.0;
        let mut tape = Tape::new();
        let xr = tape.constant(real.clone());
        let xf = tape.constant(fake);
        let lr = self.discriminator.logits(&mut tape, xr, true)?;
        let lf = self.discriminator.logits(&mut tape, xf, true)?;
        let neg_lr = tape.scale(lr, -1.0)?;
        let real_term = tape.softplus(neg_lr)?;
        let real_term = tape.mean(real_term)?;
        let fake_term = tape.softplus(lf)?;
        let fake_term = tape.mean(fake_term)?;
        let d_loss = tape.add(real_term, fake_term)?;
        rec.d_loss = Some(finite("discriminator loss", tape.value(d_loss).item()?)?);
        self.discriminator.params_mut().accumulate(&tape.backward(d_loss)?)?;
        self.opt_d.step(self.discriminator.params_mut())?;

        // generator
        let z_g = self.sample_latents(batch);
        let mut tape = Tape::new();
        let (fake, penalty) = if lambda > 0.0 {
            let terms = penalty_loss(&mut tape, &self.generator, &z_g, &self.config.penalty, &mut self.probe_rng)?;
            (terms.base.output, Some(terms.loss))
        } else {
            let zv = tape.constant(z_g);
            (self.generator.evaluate(&mut tape, zv)?.output, None)
        };
        let logits = self.discriminator.logits(&mut tape, fake, false)?;
        let neg = tape.scale(logits, -1.0)?;
        let adv = tape.softplus(neg)?;
        let adv = tape.mean(adv)?;
        rec.g_loss = Some(finite("generator loss", tape.value(adv).item()?)?);
        let loss = match penalty {
            Some(p) => {
                rec.penalty = Some(finite("penalty", tape.value(p).item()?)?);
                let weighted = tape.scale(p, lambda_t)?;
                tape.add(adv, weighted)?
            }
            None => adv,
        };
        self.generator.params_mut().accumulate(&tape.backward(loss)?)?;
        self.opt_g.step(self.generator.params_mut())?;
        Ok(rec)
    }

    /// Latent code used for a factor vector: `2f − 1`, zero-padded to the latent size.
    pub fn factors_to_latent(&self, factors: &Tensor) -> Result<Tensor> {
        let (rows, k) = factors.dims2()?;
        let dim = self.config.latent_dim;
        if k > dim {
            return Err(Error::contract(format!("{k} factors do not fit in {dim} latents")));
        }
        let mut z = Tensor::zeros(&[rows, dim]);
        for i in 0..rows {
            for j in 0..k {
                z.set(i, j, 2.0 * factors.at(i, j) - 1.0);
            }
        }
        Ok(z)
    }

    /// Generator update on mean squared reconstruction error plus `λ_t` times the penalty.
    pub fn reconstruction_step(&mut self, batch: &PairedBatch, t: u64) -> Result<TrainRecord> {
        let lambda = self.config.effective_lambda();
        let lambda_t = warmup_weight(t, self.config.warmup, lambda);
        let mut rec = TrainRecord::new(t, lambda_t);
        let z = self.factors_to_latent(&batch.factors)?;
        let mut tape = Tape::new();
        let (out, penalty) = if lambda > 0.0 {
            let terms = penalty_loss(&mut tape, &self.generator, &z, &self.config.penalty, &mut self.probe_rng)?;
            (terms.base.output, Some(terms.loss))
        } else {
            let zv = tape.constant(z);
            (self.generator.evaluate(&mut tape, zv)?.output, None)
        };
        let target = tape.constant(batch.observations.clone());
        let diff = tape.sub(out, target)?;
        let sq = tape.square(diff)?;
        let mse = tape.mean(sq)?;
        rec.recon_loss = Some(finite("reconstruction loss", tape.value(mse).item()?)?);
        let loss = match penalty {
            Some(p) => {
                rec.penalty = Some(finite("penalty", tape.value(p).item()?)?);
                let weighted = tape.scale(p, lambda_t)?;
                tape.add(mse, weighted)?
            }
            None => mse,
        };
        self.generator.params_mut().accumulate(&tape.backward(loss)?)?;
        self.opt_g.step(self.generator.params_mut())?;
        Ok(rec)
    }

    /// Draws a batch and performs the configured kind of step.
    pub fn step(&mut self) -> Result<TrainRecord> {
        let start = Instant::now();
        let t = self.step;
        let mut rec = match self.config.mode {
            Mode::Gan | Mode::Baseline => {
                let real = self.real_batch()?;
                self.gan_step(&real, t)?
            }
            Mode::Reconstruction => {
                let batch = self.paired_batch()?;
                self.reconstruction_step(&batch, t)?
            }
        };
        self.step += 1;
        rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(rec)
    }

    /// Runs the configured number of steps, handing every record to `sink`. A failing step
    /// is reported to `sink` as a record carrying the error before the error is returned.
    pub fn train(&mut self, mut sink: impl FnMut(&TrainRecord) -> Result<()>) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        while self.step < self.config.steps {
            match self.step() {
                Ok(rec) => {
                    sink(&rec)?;
                    log.records.push(rec);
                }
                Err(e) => {
                    let mut rec = TrainRecord::new(self.step, self.config.lambda_at(self.step));
                    rec.error = Some(e.to_string());
                    sink(&rec)?;
                    log.records.push(rec);
                    return Err(e);
                }
            }
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "toolkit_version": crate::VERSION,
            "generator": self.generator.config(),
            "discriminator": self.discriminator.config(),
            "train": self.config,
            "steps_taken": self.step,
        });
        Checkpoint::from_stores(meta, &[self.generator.params(), self.discriminator.params()])
    }
}

/// Rebuilds the generator stored in a checkpoint.
pub fn generator_from_checkpoint(ck: &Checkpoint) -> Result<Generator> {
    let cfg: GeneratorConfig = serde_json::from_value(ck.meta["generator"].clone())
        .map_err(|e| Error::Format(format!("checkpoint generator config: {e}")))?;
    Generator::from_parts(cfg, ck.store("g.")?)
}

pub fn discriminator_from_checkpoint(ck: &Checkpoint) -> Result<Discriminator> {
    let cfg: DiscriminatorConfig = serde_json::from_value(ck.meta["discriminator"].clone())
        .map_err(|e| Error::Format(format!("checkpoint discriminator config: {e}")))?;
    Discriminator::from_parts(cfg, ck.store("d.")?)
}
