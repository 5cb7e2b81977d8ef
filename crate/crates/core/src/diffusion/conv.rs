//! Small trainable noise predictor.
//!
//! The network sees a variance-normalized input and predicts a residual on top
//! of the best single-Gaussian (Wiener) noise estimate, so an untrained net is
//! already a reasonable denoiser:
//!
//! ```text
//! v = ab s^2 + 1 - ab,  r = z - sqrt(ab) m
//! eps = sqrt(1 - ab) / v * r + sqrt(ab) s / sqrt(v) * F(r / sqrt(v), t)
//! ```
//! with `m` the per-pixel data mean and `s` the data standard deviation.

use super::checkpoint::{Checkpoint, NamedArray};
use super::schedule::NoiseSchedule;
use super::Denoiser;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::nn::{sinusoidal_embedding, EncDec, EncDecConfig, EncDecTape, Feat, Params};

pub const CHECKPOINT_KIND: &str = "conv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvDenoiserConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub width1: usize,
    pub width2: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub embed_hidden: usize,
    pub template_head: bool,
    pub seed: u64,
}

impl ConvDenoiserConfig {
    /// The default plan for `h x w x c` images (about 100k parameters at 16x16x1).
    pub fn for_shape(shape: Shape) -> Self {
        Self {
            height: shape.height,
            width: shape.width,
            channels: shape.channels,
            width1: 16,
            width2: 32,
            hidden: 128,
            embed_dim: 16,
            embed_hidden: 32,
            template_head: true,
            seed: 0,
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }

    fn net(&self) -> EncDecConfig {
        EncDecConfig {
            in_channels: self.channels,
            out_channels: self.channels,
            height: self.height,
            width: self.width,
            width1: self.width1,
            width2: self.width2,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            embed_hidden: self.embed_hidden,
            template_head: self.template_head,
        }
    }

    fn to_meta(self, ckpt: &mut Checkpoint) {
        for (k, v) in [
            ("conv.height", self.height),
            ("conv.width", self.width),
            ("conv.channels", self.channels),
            ("conv.width1", self.width1),
            ("conv.width2", self.width2),
            ("conv.hidden", self.hidden),
            ("conv.embed_dim", self.embed_dim),
            ("conv.embed_hidden", self.embed_hidden),
            ("conv.template_head", self.template_head as usize),
        ] {
            ckpt.set_meta(k, v.to_string());
        }
        ckpt.set_meta("conv.seed", self.seed.to_string());
    }

    fn from_meta(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self {
            height: ckpt.meta_parse("conv.height")?,
            width: ckpt.meta_parse("conv.width")?,
            channels: ckpt.meta_parse("conv.channels")?,
            width1: ckpt.meta_parse("conv.width1")?,
            width2: ckpt.meta_parse("conv.width2")?,
            hidden: ckpt.meta_parse("conv.hidden")?,
            embed_dim: ckpt.meta_parse("conv.embed_dim")?,
            embed_hidden: ckpt.meta_parse("conv.embed_hidden")?,
            template_head: ckpt.meta_parse::<usize>("conv.template_head")? != 0,
            seed: ckpt.meta_parse("conv.seed")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConvDenoiser {
    cfg: ConvDenoiserConfig,
    net: EncDec,
    params: Params,
    data_mean: Image,
    data_std: f64,
    schedule: NoiseSchedule,
}

pub struct ConvTape {
    net: EncDecTape,
    c_in: f64,
    c_skip: f64,
    c_out: f64,
}

impl ConvDenoiser {
    /// Fresh weights; `data_mean` and `data_std` fix the preconditioning.
    pub fn new(cfg: ConvDenoiserConfig, schedule: NoiseSchedule, data_mean: Image, data_std: f64) -> Result<Self> {
        if data_mean.shape() != cfg.shape() {
            return Err(Error::ShapeMismatch {
                expected: cfg.shape().to_string(),
                actual: data_mean.shape().to_string(),
            });
        }
        if !(data_std.is_finite() && data_std > 0.0) {
            return Err(Error::invalid(format!("data std must be positive, got {data_std}")));
        }
        let (net, params) = EncDec::new(cfg.net(), cfg.seed, 0.1)?;
        Ok(Self {
            cfg,
            net,
            params,
            data_mean,
            data_std,
            schedule,
        })
    }

    pub fn config(&self) -> &ConvDenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn data_mean(&self) -> &Image {
        &self.data_mean
    }

    pub fn data_std(&self) -> f64 {
        self.data_std
    }

    fn coeffs(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.schedule.alpha_bar(t);
        let s2 = self.data_std * self.data_std;
        let v = ab * s2 + 1.0 - ab;
        let c_in = 1.0 / v.sqrt();
        (c_in, (1.0 - ab).sqrt() / v, ab.sqrt() * self.data_std * c_in)
    }

    fn embed(&self, t: usize) -> Vec<f64> {
        sinusoidal_embedding(t as f64, self.cfg.embed_dim)
    }

    /// Accumulates the parameter gradient of `<grad_eps, eps>` into `grads`.
    pub fn backward_params(&self, tape: &ConvTape, grad_eps: &Image, grads: &mut Params) {
        let g = Feat::from_image(&grad_eps.scale(tape.c_out));
        self.net.backward(&self.params, &tape.net, &g, Some(grads), false);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = self.params.to_arrays();
        let s = self.data_mean.shape();
        arrays.push(NamedArray::new(
            "precond.mean",
            vec![s.height, s.width, s.channels],
            self.data_mean.data().to_vec(),
        ));
        arrays.push(NamedArray::new("precond.std", vec![1], vec![self.data_std]));
        let mut ckpt = Checkpoint::new(&self.schedule, arrays);
        ckpt.set_meta("kind", CHECKPOINT_KIND);
        self.cfg.to_meta(&mut ckpt);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if let Some(kind) = ckpt.kind() {
            if kind != CHECKPOINT_KIND {
                return Err(Error::Format {
                    kind: "checkpoint",
                    reason: format!("expected a {CHECKPOINT_KIND} model, found {kind:?}"),
                });
            }
        }
        let cfg = ConvDenoiserConfig::from_meta(ckpt)?;
        let mean = Image::from_vec(cfg.shape(), ckpt.array("precond.mean")?.data().to_vec())?;
        let std = ckpt.array("precond.std")?.data().first().copied().unwrap_or(0.0);
        let mut d = Self::new(cfg, ckpt.schedule()?, mean, std)?;
        d.params.load_arrays(ckpt.arrays())?;
        Ok(d)
    }
}

impl Denoiser for ConvDenoiser {
    type Tape = ConvTape;

    fn image_shape(&self) -> Shape {
        self.cfg.shape()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn forward(&self, z_t: &Image, t: usize) -> Result<(Image, ConvTape)> {
        self.schedule.check_step(t)?;
        if t == 0 {
            return Err(Error::StepOutOfRange {
                t,
                max: self.schedule.steps(),
            });
        }
        z_t.ensure_same_shape(&self.data_mean)?;
        let (c_in, c_skip, c_out) = self.coeffs(t);
        let r = z_t.axpby(1.0, &self.data_mean, -self.schedule.signal(t))?;
        let emb = self.embed(t);
        let (f, net) = self.net.forward(&self.params, Feat::from_image(&r.scale(c_in)), Some(&emb));
        let f = f.to_image(r.shape());
        let eps = r.axpby(c_skip, &f, c_out)?;
        Ok((eps, ConvTape { net, c_in, c_skip, c_out }))
    }

    fn backward(&self, tape: &ConvTape, grad_eps: &Image) -> Result<Image> {
        let g = Feat::from_image(&grad_eps.scale(tape.c_out));
        let g_u = self
            .net
            .backward(&self.params, &tape.net, &g, None, true)
            .expect("input gradient requested");
        let g_u = g_u.to_image(grad_eps.shape());
        grad_eps.axpby(tape.c_skip, &g_u, tape.c_in)
    }
}
