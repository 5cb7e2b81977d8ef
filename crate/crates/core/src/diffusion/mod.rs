//! The frozen generative mapping: noise schedule, noise predictors and the
//! coarse deterministic DDIM sampler.

pub mod checkpoint;
pub mod conv;
pub mod gmm;
pub mod sampler;
pub mod schedule;
pub mod train;

use crate::error::Result;
use crate::image::{Image, Shape};

pub use checkpoint::Checkpoint;
pub use conv::{ConvDenoiser, ConvDenoiserConfig};
pub use gmm::{AnalyticGmmDenoiser, GmmModel};
pub use sampler::{ddim_generate, ddim_step, forward_diffuse, x0_hat_from, DdimSampler};
pub use schedule::{make_schedule, NoiseSchedule};
pub use train::{held_out_errors, train_denoiser, train_denoiser_with, Dataset, TimeSampling, TrainConfig, TrainReport};

/// A noise predictor `eps(z_t, t)` with a vector-Jacobian product.
///
/// Implementations are pure: identical `(z_t, t)` give bit-identical output,
/// and nothing in restoration mutates them.
pub trait Denoiser {
    /// Whatever the backward pass needs from the forward pass.
    type Tape;

    fn image_shape(&self) -> Shape;

    fn schedule(&self) -> &NoiseSchedule;

    fn forward(&self, z_t: &Image, t: usize) -> Result<(Image, Self::Tape)>;

    /// Gradient with respect to `z_t` given the gradient on the predicted noise.
    fn backward(&self, tape: &Self::Tape, grad_eps: &Image) -> Result<Image>;

    fn eval(&self, z_t: &Image, t: usize) -> Result<Image> {
        self.forward(z_t, t).map(|(eps, _)| eps)
    }
}

/// Either of the two shipped denoisers, selected at load time.
#[derive(Debug, Clone)]
pub enum AnyDenoiser {
    Conv(ConvDenoiser),
    Gmm(AnalyticGmmDenoiser),
}

pub enum AnyTape {
    Conv(<ConvDenoiser as Denoiser>::Tape),
    Gmm(<AnalyticGmmDenoiser as Denoiser>::Tape),
}

impl AnyDenoiser {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.kind() {
            Some(gmm::CHECKPOINT_KIND) => Ok(Self::Gmm(AnalyticGmmDenoiser::from_checkpoint(ckpt)?)),
            _ => Ok(Self::Conv(ConvDenoiser::from_checkpoint(ckpt)?)),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

impl Denoiser for AnyDenoiser {
    type Tape = AnyTape;

    fn image_shape(&self) -> Shape {
        match self {
            Self::Conv(d) => d.image_shape(),
            Self::Gmm(d) => d.image_shape(),
        }
    }

    fn schedule(&self) -> &NoiseSchedule {
        match self {
            Self::Conv(d) => d.schedule(),
            Self::Gmm(d) => d.schedule(),
        }
    }

    fn forward(&self, z_t: &Image, t: usize) -> Result<(Image, AnyTape)> {
        match self {
            Self::Conv(d) => d.forward(z_t, t).map(|(e, tp)| (e, AnyTape::Conv(tp))),
            Self::Gmm(d) => d.forward(z_t, t).map(|(e, tp)| (e, AnyTape::Gmm(tp))),
        }
    }

    fn backward(&self, tape: &AnyTape, grad_eps: &Image) -> Result<Image> {
        match (self, tape) {
            (Self::Conv(d), AnyTape::Conv(tp)) => d.backward(tp, grad_eps),
            (Self::Gmm(d), AnyTape::Gmm(tp)) => d.backward(tp, grad_eps),
            _ => Err(crate::error::Error::invalid("tape does not belong to this denoiser")),
        }
    }
}
