//! Blind image restoration by early-stopped diffusion latent inversion:
//! benchmark harness, run configuration, plots and the command layer behind
//! the `diip` binary. The numerical core lives in `diip-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod plot;
pub mod presets;

pub use diip_core as core;
pub use diip_degrade as degrade;
pub use diip_dip as dip;
