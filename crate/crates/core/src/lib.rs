//! Diffusion Image Prior: blind restoration by inverting a frozen, coarse
//! DDIM sampler, stopped early by two self-supervised criteria.

pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod io;
pub mod nn;
pub mod inversion;
pub mod optim;
pub mod rng;
pub mod stopping;
pub mod trajectory;

pub use error::{Error, Result};
pub use image::{Image, Kernel2D, Shape};
