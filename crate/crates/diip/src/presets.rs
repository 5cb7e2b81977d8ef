//! Desk-scale defaults shared by the command line, the examples and the
//! acceptance suite.

use diip_core::datasets::{pattern_gmm, DEFAULT_PATTERN_COMPONENTS};
use diip_core::diffusion::{ConvDenoiserConfig, GmmModel, TrainConfig};
use diip_core::error::Result;
use diip_core::image::{Image, Shape};
use diip_core::inversion::InversionConfig;
use diip_core::optim::AdamConfig;
use diip_core::rng;
use diip_core::stopping::RestoreConfig;
use diip_degrade::{Degradation, DegradationSpec};

pub const SIDE: usize = 16;
pub const PATTERN_STD: f64 = diip_core::datasets::DEFAULT_PATTERN_STD;
pub const PATTERN_SEED: u64 = 7;
/// Latent learning rate for 16x16 inputs.
pub const DESK_LR: f64 = 0.015;

pub fn shape() -> Shape {
    Shape::new(SIDE, SIDE, 1)
}

/// The pattern mixture every desk experiment draws clean images from.
pub fn gmm() -> Result<GmmModel> {
    pattern_gmm(shape(), DEFAULT_PATTERN_COMPONENTS, PATTERN_STD, PATTERN_SEED)
}

pub fn model_config() -> ConvDenoiserConfig {
    ConvDenoiserConfig::for_shape(shape())
}

pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

/// Restoration settings used for desk-scale experiments: the default stop
/// rule with faster latent steps.
pub fn restore_config(seed: u64) -> RestoreConfig {
    RestoreConfig {
        inversion: InversionConfig {
            adam: AdamConfig::with_lr(DESK_LR),
            ..InversionConfig::default()
        },
        seed,
        ..RestoreConfig::default()
    }
}

/// Clean images: independent draws from [`gmm`].
pub fn clean_images(n: usize, seed: u64) -> Result<Vec<Image>> {
    let g = gmm()?;
    let mut r = rng::rng(seed);
    Ok((0..n).map(|_| g.sample(&mut r)).collect())
}

pub fn blur() -> Degradation {
    Degradation::GaussianBlur { size: 7, sigma: 1.2 }
}

pub fn noise() -> Degradation {
    Degradation::speckle_default()
}

pub fn jpeg() -> Degradation {
    Degradation::JpegBlock { quality: 5 }
}

pub fn warp() -> Degradation {
    Degradation::SmoothWarp {
        amplitude: 1.5,
        correlation: 4.0,
    }
}

/// Four operators, two of each family: noise, block coding, blur, warp.
pub fn mixed_specs(seed: u64) -> Vec<DegradationSpec> {
    [noise(), jpeg(), blur(), warp()]
        .into_iter()
        .enumerate()
        .map(|(i, op)| DegradationSpec::new(op, rng::derive_seed(seed, i as u64)))
        .collect()
}

/// Degradation by kind name with the desk parameters.
pub fn by_kind(kind: &str) -> Option<Degradation> {
    Some(match kind {
        "speckle_mix" => noise(),
        "gaussian_noise" => Degradation::GaussianNoise { sigma: 0.2 },
        "gaussian_blur" => blur(),
        "downsample_sr" => Degradation::super_resolution(2),
        "jpeg_block" => jpeg(),
        "smooth_warp" => warp(),
        _ => return None,
    })
}
