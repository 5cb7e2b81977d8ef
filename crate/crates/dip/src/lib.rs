//! Deep Image Prior baseline: an untrained encoder-decoder fitted to one
//! degraded image from a frozen noise input, recorded with the same
//! trajectory and observer machinery as latent inversion.

use diip_core::error::{Error, Result};
use diip_core::image::{laplacian_variance, psnr, Image, Shape};
use diip_core::inversion::{Aborted, Control, Observer};
use diip_core::nn::{EncDec, EncDecConfig, EncDecTape, Feat, Params};
use diip_core::optim::{AdamConfig, AdamState};
use diip_core::rng;
use diip_core::trajectory::{Trajectory, DEFAULT_WINDOW};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_ITERS: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipConfig {
    pub input_channels: usize,
    /// Standard deviation of the frozen input noise.
    pub input_std: f64,
    pub width1: usize,
    pub width2: usize,
    pub hidden: usize,
    pub lr: f64,
    pub max_iters: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for DipConfig {
    fn default() -> Self {
        Self {
            input_channels: 8,
            input_std: 0.1,
            width1: 24,
            width2: 48,
            hidden: 128,
            lr: DEFAULT_LR,
            max_iters: DEFAULT_ITERS,
            window: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

/// `x = sigmoid(f_theta(z))` with `z` drawn once and never updated.
#[derive(Debug, Clone)]
pub struct DipNet {
    shape: Shape,
    net: EncDec,
    params: Params,
    input: Feat,
}

pub struct DipTape {
    net: EncDecTape,
    out: Image,
}

impl DipNet {
    pub fn new(shape: Shape, cfg: &DipConfig) -> Result<Self> {
        let net_cfg = EncDecConfig {
            in_channels: cfg.input_channels,
            out_channels: shape.channels,
            height: shape.height,
            width: shape.width,
            width1: cfg.width1,
            width2: cfg.width2,
            hidden: cfg.hidden,
            embed_dim: 0,
            embed_hidden: 0,
            template_head: false,
        };
        let (net, params) = EncDec::new(net_cfg, rng::derive_seed(cfg.seed, 1), 1.0)?;
        let mut r = rng::rng_stream(cfg.seed, 2);
        let n = cfg.input_channels * shape.height * shape.width;
        let z = rng::normal_vec(n, &mut r).into_iter().map(|v| cfg.input_std * v).collect();
        let input = Feat::from_vec(cfg.input_channels, shape.height, shape.width, z);
        Ok(Self {
            shape,
            net,
            params,
            input,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn input(&self) -> &Feat {
        &self.input
    }

    pub fn forward(&self) -> (Image, DipTape) {
        let (f, net) = self.net.forward(&self.params, self.input.clone(), None);
        let out = f.to_image(self.shape).map(sigmoid);
        (out.clone(), DipTape { net, out })
    }

    /// Parameter gradient of `<grad_out, x>`, accumulated into `grads`.
    pub fn backward(&self, tape: &DipTape, grad_out: &Image, grads: &mut Params) {
        let g = tape.out.zip_map(grad_out, |s, g| g * s * (1.0 - s)).expect("same shape");
        self.net
            .backward(&self.params, &tape.net, &Feat::from_image(&g), Some(grads), false);
    }

    /// `|x - y|^2` and its parameter gradient.
    pub fn loss(&self, y: &Image) -> Result<(f64, Params, Image)> {
        let (x, tape) = self.forward();
        let resid = x.axpby(1.0, y, -1.0)?;
        let loss = resid.data().iter().map(|v| v * v).sum();
        let mut grads = self.params.zeros_like();
        self.backward(&tape, &resid.scale(2.0), &mut grads);
        Ok((loss, grads, x))
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone)]
pub struct DipRun {
    pub trajectory: Trajectory,
    pub net: DipNet,
    pub halted: bool,
}

/// Fits a fresh [`DipNet`] to `y` with Adam, recording iterations `0..=n`.
pub fn dip_run(
    y: &Image,
    cfg: &DipConfig,
    reference: Option<&Image>,
    observers: &mut [&mut dyn Observer],
) -> std::result::Result<DipRun, Aborted> {
    let trajectory = Trajectory::new(cfg.window);
    let net = match DipNet::new(y.shape(), cfg) {
        Ok(n) => n,
        Err(error) => return Err(Aborted { error, trajectory }),
    };
    fit(y, net, cfg, reference, observers, trajectory)
}

/// As [`dip_run`] from a given network.
pub fn dip_run_from(
    y: &Image,
    net: DipNet,
    cfg: &DipConfig,
    reference: Option<&Image>,
    observers: &mut [&mut dyn Observer],
) -> std::result::Result<DipRun, Aborted> {
    fit(y, net, cfg, reference, observers, Trajectory::new(cfg.window))
}

fn fit(
    y: &Image,
    mut net: DipNet,
    cfg: &DipConfig,
    reference: Option<&Image>,
    observers: &mut [&mut dyn Observer],
    mut trajectory: Trajectory,
) -> std::result::Result<DipRun, Aborted> {
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(Aborted { error, trajectory }),
            }
        };
    }
    if y.shape() != net.shape() {
        bail!(Err(Error::ShapeMismatch {
            expected: net.shape().to_string(),
            actual: y.shape().to_string(),
        }));
    }
    if let Some(r) = reference {
        bail!(r.ensure_same_shape(y));
    }
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    bail!(adam_cfg.validate());
    let mut adam = AdamState::new(net.params().len(), adam_cfg);
    let mut k = 0;
    loop {
        let (loss, grads, x) = bail!(net.loss(y));
        if !loss.is_finite() || grads.values().iter().any(|g| !g.is_finite()) {
            bail!(Err(Error::NonFinite {
                iteration: k,
                what: "DIP loss or gradient".into(),
            }));
        }
        let lap = bail!(laplacian_variance(&x));
        let p = match reference {
            Some(r) => Some(bail!(psnr(&x, r, 1.0))),
            None => None,
        };
        let record = *trajectory.push(loss, lap, p, &x);
        let mut halt = false;
        for o in observers.iter_mut() {
            halt |= o.observe(&record, &x, &trajectory) == Control::Halt;
        }
        if halt || k == cfg.max_iters {
            return Ok(DipRun {
                trajectory,
                net,
                halted: halt && k < cfg.max_iters,
            });
        }
        bail!(adam.step(net.params_mut().values_mut(), grads.values()));
        k += 1;
    }
}
