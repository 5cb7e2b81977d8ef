//! Adam on the sampler's initial latent to fit a target image.

use std::fmt;

use crate::diffusion::{DdimSampler, Denoiser};
use crate::error::{Error, Result};
use crate::image::{laplacian_variance, psnr, Image, Shape};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::trajectory::{Record, Trajectory, DEFAULT_WINDOW};

/// Iteration budget when nothing stops the run earlier.
pub const DEFAULT_MAX_ITERS: usize = 1500;

/// The optimized variable `z` and the seed it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub z: Image,
    pub seed: u64,
}

/// `z ~ N(0, I)` from a seeded generator.
pub fn init_latent(shape: Shape, seed: u64) -> Latent {
    Latent {
        z: rng::normal_image(shape, &mut rng::rng(seed)),
        seed,
    }
}

/// Loss, its gradient with respect to `z`, and the reconstruction `g(z)`.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Image,
    pub output: Image,
}

/// `|g(z) - y|^2` and its exact gradient through every sampler step.
pub fn recon_loss<D: Denoiser>(z: &Image, y: &Image, g: &DdimSampler<'_, D>) -> Result<LossEval> {
    y.ensure_same_shape(z)?;
    let (output, tape) = g.generate_with_tape(z)?;
    let resid = output.axpby(1.0, y, -1.0)?;
    let loss = resid.data().iter().map(|r| r * r).sum();
    let grad = g.backward(&tape, &resid.scale(2.0))?;
    Ok(LossEval { loss, grad, output })
}

/// `z <- z - adam(grad)`.
pub fn adam_step(z: &mut Latent, grad: &Image, state: &mut AdamState) -> Result<()> {
    z.z.ensure_same_shape(grad)?;
    state.step(z.z.data_mut(), grad.data())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub adam: AdamConfig,
    pub max_iters: usize,
    pub window: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            max_iters: DEFAULT_MAX_ITERS,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Halt,
}

/// Sees every record as soon as it is appended.
pub trait Observer {
    fn observe(&mut self, record: &Record, image: &Image, trajectory: &Trajectory) -> Control;
}

impl<F: FnMut(&Record, &Image, &Trajectory) -> Control> Observer for F {
    fn observe(&mut self, record: &Record, image: &Image, trajectory: &Trajectory) -> Control {
        self(record, image, trajectory)
    }
}

/// Keeps copies of the iterates at the requested iterations.
#[derive(Debug, Clone, Default)]
pub struct CaptureAt {
    wanted: Vec<usize>,
    pub captured: Vec<(usize, Image)>,
}

impl CaptureAt {
    pub fn new(mut wanted: Vec<usize>) -> Self {
        wanted.sort_unstable();
        wanted.dedup();
        Self {
            wanted,
            captured: Vec::new(),
        }
    }

    pub fn get(&self, k: usize) -> Option<&Image> {
        self.captured.iter().find(|(j, _)| *j == k).map(|(_, im)| im)
    }
}

impl Observer for CaptureAt {
    fn observe(&mut self, record: &Record, image: &Image, _: &Trajectory) -> Control {
        if self.wanted.binary_search(&record.k).is_ok() {
            self.captured.push((record.k, image.clone()));
        }
        if self.wanted.last().is_some_and(|&last| record.k >= last) {
            Control::Halt
        } else {
            Control::Continue
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub trajectory: Trajectory,
    /// Latent of the last recorded iteration.
    pub latent: Latent,
    /// Whether an observer ended the run before the budget.
    pub halted: bool,
}

/// A run that hit a numerical failure; the partial trajectory is kept.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub trajectory: Trajectory,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} recorded iterations)", self.error, self.trajectory.len())
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.error
    }
}

/// Runs up to `cfg.max_iters` Adam updates from `init`, recording iterations
/// `0..=n`. Each iteration costs one sampler pass and one backward pass.
pub fn run_inversion<D: Denoiser>(
    y: &Image,
    g: &DdimSampler<'_, D>,
    init: Latent,
    cfg: &InversionConfig,
    reference: Option<&Image>,
    observers: &mut [&mut dyn Observer],
) -> Result<Inversion, Aborted> {
    let mut trajectory = Trajectory::new(cfg.window);
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(Aborted { error, trajectory }),
            }
        };
    }
    bail!(cfg.adam.validate());
    let shape = g.denoiser().image_shape();
    bail!(y.ensure_same_shape(&Image::zeros(shape)));
    bail!(init.z.ensure_same_shape(y));
    if let Some(r) = reference {
        bail!(r.ensure_same_shape(y));
    }
    let mut latent = init;
    let mut adam = AdamState::new(shape.len(), cfg.adam);
    let mut k = 0;
    loop {
        let eval = bail!(recon_loss(&latent.z, y, g));
        if !eval.loss.is_finite() || !eval.grad.is_finite() {
            return Err(Aborted {
                error: Error::NonFinite {
                    iteration: k,
                    what: "reconstruction loss or gradient".into(),
                },
                trajectory,
            });
        }
        let lap = bail!(laplacian_variance(&eval.output));
        let p = match reference {
            Some(r) => Some(bail!(psnr(&eval.output, r, 1.0))),
            None => None,
        };
        let record = *trajectory.push(eval.loss, lap, p, &eval.output);
        let mut halt = false;
        for o in observers.iter_mut() {
            halt |= o.observe(&record, &eval.output, &trajectory) == Control::Halt;
        }
        if halt || k == cfg.max_iters {
            return Ok(Inversion {
                trajectory,
                latent,
                halted: halt && k < cfg.max_iters,
            });
        }
        bail!(adam_step(&mut latent, &eval.grad, &mut adam));
        k += 1;
    }
}
