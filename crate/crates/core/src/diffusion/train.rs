//! Epsilon-prediction training of [`ConvDenoiser`].

use super::checkpoint::Checkpoint;
use super::conv::{ConvDenoiser, ConvDenoiserConfig};
use super::gmm::GmmModel;
use super::sampler::forward_diffuse;
use super::schedule::NoiseSchedule;
use super::Denoiser;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use rand::Rng;

/// Where clean training images come from.
#[derive(Debug, Clone)]
pub enum Dataset {
    /// Fresh draws from a mixture on every step.
    Gmm(GmmModel),
    /// A fixed image collection, sampled uniformly with replacement.
    Images(Vec<Image>),
}

impl Dataset {
    pub fn shape(&self) -> Result<Shape> {
        match self {
            Self::Gmm(g) => Ok(g.shape()),
            Self::Images(v) => {
                let first = v.first().ok_or_else(|| Error::invalid("empty training dataset"))?;
                for img in v {
                    first.ensure_same_shape(img)?;
                }
                Ok(first.shape())
            }
        }
    }

    pub fn sample(&self, r: &mut impl Rng) -> Image {
        match self {
            Self::Gmm(g) => g.sample(r),
            Self::Images(v) => v[r.random_range(0..v.len())].clone(),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Self::Gmm(g) => format!("gmm-k{}", g.components()),
            Self::Images(v) => format!("images-{}", v.len()),
        }
    }

    /// Per-pixel mean and overall standard deviation about that mean.
    pub fn moments(&self, seed: u64) -> Result<(Image, f64)> {
        let shape = self.shape()?;
        let draws: Vec<Image> = match self {
            Self::Gmm(_) => {
                let mut r = rng::rng(seed);
                (0..1024).map(|_| self.sample(&mut r)).collect()
            }
            Self::Images(v) => v.clone(),
        };
        let n = draws.len() as f64;
        let mut mean = Image::zeros(shape);
        for d in &draws {
            mean = mean.axpby(1.0, d, 1.0 / n)?;
        }
        let var = draws.iter().map(|d| d.sum_sq_diff(&mean).unwrap()).sum::<f64>() / (n * shape.len() as f64);
        Ok((mean, var.sqrt().max(1e-3)))
    }
}

/// Which diffusion times a training example may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSampling {
    /// Uniform over `1..=T`.
    Uniform,
    /// Uniform over the multiples of the given stride, i.e. the times the
    /// coarse sampler actually visits.
    Grid(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub times: TimeSampling,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_size: 16,
            lr: 2e-3,
            final_lr_fraction: 0.05,
            times: TimeSampling::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean per-pixel squared error of each step's batch.
    pub losses: Vec<f64>,
    pub checkpoint: Checkpoint,
}

impl TrainReport {
    /// Mean loss over the last `n` steps.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Trains a fresh denoiser for `model.shape()`; the model seed is taken from
/// `cfg.seed` so one seed pins initialization and data order.
pub fn train_denoiser(
    dataset: &Dataset,
    sched: &NoiseSchedule,
    model: ConvDenoiserConfig,
    cfg: &TrainConfig,
) -> Result<(ConvDenoiser, TrainReport)> {
    train_denoiser_with(dataset, sched, model, cfg, |_, _| {})
}

/// As [`train_denoiser`], calling `on_step(step, loss)` after every update.
pub fn train_denoiser_with(
    dataset: &Dataset,
    sched: &NoiseSchedule,
    model: ConvDenoiserConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(ConvDenoiser, TrainReport)> {
    let shape = dataset.shape()?;
    if shape != model.shape() {
        return Err(Error::ShapeMismatch {
            expected: model.shape().to_string(),
            actual: shape.to_string(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if let TimeSampling::Grid(s) = cfg.times {
        if s == 0 || sched.steps() % s != 0 {
            return Err(Error::invalid(format!("time grid stride {s} must divide {}", sched.steps())));
        }
    }
    let model = ConvDenoiserConfig { seed: cfg.seed, ..model };
    let (mean, std) = dataset.moments(rng::derive_seed(cfg.seed, 1))?;
    let mut den = ConvDenoiser::new(model, sched.clone(), mean, std)?;
    let mut adam = AdamState::new(den.parameter_count(), AdamConfig::with_lr(cfg.lr));
    let scale = 2.0 / (shape.len() * cfg.batch_size) as f64;
    let mut losses = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let mut r = rng::rng_stream(cfg.seed, step as u64 + 1);
        let mut grads = den.params().zeros_like();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let x0 = dataset.sample(&mut r);
            let t = match cfg.times {
                TimeSampling::Uniform => r.random_range(1..=sched.steps()),
                TimeSampling::Grid(s) => s * r.random_range(1..=sched.steps() / s),
            };
            let noise = rng::normal_image(shape, &mut r);
            let z = forward_diffuse(&x0, t, &noise, sched)?;
            let (eps, tape) = den.forward(&z, t)?;
            let diff = eps.axpby(1.0, &noise, -1.0)?;
            loss += diff.data().iter().map(|d| d * d).sum::<f64>();
            den.backward_params(&tape, &diff.scale(scale), &mut grads);
        }
        let loss = loss / (shape.len() * cfg.batch_size) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: step,
                what: "training loss".into(),
            });
        }
        let progress = step as f64 / cfg.iterations.max(1) as f64;
        let lr = cfg.lr
            * (cfg.final_lr_fraction
                + (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        adam.step_with_lr(den.params_mut().values_mut(), grads.values(), lr)?;
        losses.push(loss);
        on_step(step, loss);
    }

    // Round to the stored precision so the in-memory model and a reloaded
    // checkpoint agree bit for bit.
    for v in den.params_mut().values_mut() {
        *v = *v as f32 as f64;
    }
    let mut checkpoint = den.to_checkpoint();
    checkpoint.set_meta("dataset", dataset.tag());
    checkpoint.set_meta("iterations", cfg.iterations.to_string());
    checkpoint.set_meta("seed", cfg.seed.to_string());
    let den = ConvDenoiser::from_checkpoint(&checkpoint)?;
    Ok((den, TrainReport { losses, checkpoint }))
}

/// Mean per-pixel `|eps_a - eps_b|^2` and `|eps_b - eps|^2` over held-out
/// `(x0, t, eps)` triples: the first is the model's excess error over `b`,
/// the second `b`'s own (irreducible, when `b` is exact) error.
pub fn held_out_errors<A: Denoiser, B: Denoiser>(
    model: &A,
    oracle: &B,
    dataset: &Dataset,
    pairs: usize,
    times: TimeSampling,
    seed: u64,
) -> Result<(f64, f64)> {
    let shape = dataset.shape()?;
    let sched = oracle.schedule();
    let mut r = rng::rng(seed);
    let (mut excess, mut irreducible) = (0.0, 0.0);
    for _ in 0..pairs {
        let x0 = dataset.sample(&mut r);
        let t = match times {
            TimeSampling::Uniform => r.random_range(1..=sched.steps()),
            TimeSampling::Grid(s) => s * r.random_range(1..=sched.steps() / s),
        };
        let noise = rng::normal_image(shape, &mut r);
        let z = forward_diffuse(&x0, t, &noise, sched)?;
        let a = model.eval(&z, t)?;
        let b = oracle.eval(&z, t)?;
        excess += a.sum_sq_diff(&b)?;
        irreducible += b.sum_sq_diff(&noise)?;
    }
    let n = (pairs * shape.len()) as f64;
    Ok((excess / n, irreducible / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_setup() -> (Dataset, ConvDenoiserConfig) {
        let shape = Shape::new(8, 8, 1);
        let means = vec![Image::filled(shape, 0.2), Image::from_fn(shape, |y, _, _| (y % 2) as f64)];
        let data = Dataset::Gmm(GmmModel::uniform(means, 0.05).unwrap());
        let cfg = ConvDenoiserConfig {
            width1: 4,
            width2: 4,
            hidden: 8,
            embed_dim: 8,
            embed_hidden: 8,
            ..ConvDenoiserConfig::for_shape(shape)
        };
        (data, cfg)
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let (data, model) = tiny_setup();
        let sched = NoiseSchedule::default();
        let cfg = TrainConfig {
            iterations: 0,
            seed: 11,
            ..TrainConfig::default()
        };
        let (den, report) = train_denoiser(&data, &sched, model, &cfg).unwrap();
        assert!(report.losses.is_empty());
        let (mean, std) = data.moments(rng::derive_seed(11, 1)).unwrap();
        let init = ConvDenoiser::new(ConvDenoiserConfig { seed: 11, ..model }, sched, mean, std).unwrap();
        let stored = |c: &Checkpoint| Checkpoint::from_bytes(&c.to_bytes()).unwrap().arrays().to_vec();
        assert_eq!(stored(&report.checkpoint), stored(&init.to_checkpoint()));
        assert_eq!(den.params().len(), init.params().len());
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let (data, model) = tiny_setup();
        let sched = NoiseSchedule::default();
        let cfg = TrainConfig {
            iterations: 60,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, a) = train_denoiser(&data, &sched, model, &cfg).unwrap();
        let (_, b) = train_denoiser(&data, &sched, model, &cfg).unwrap();
        assert_eq!(a.checkpoint.digest(), b.checkpoint.digest());
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.checkpoint.meta("iterations"), Some("60"));
    }

    #[test]
    fn non_finite_data_aborts() {
        let shape = Shape::new(8, 8, 1);
        let mut bad = Image::zeros(shape);
        bad.data_mut()[0] = f64::NAN;
        let data = Dataset::Images(vec![bad]);
        let (_, model) = tiny_setup();
        let cfg = TrainConfig {
            iterations: 2,
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(train_denoiser(&data, &NoiseSchedule::default(), model, &cfg).is_err());
    }
}
