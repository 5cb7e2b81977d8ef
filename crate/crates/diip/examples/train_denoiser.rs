//! Trains the convolutional noise predictor on the pattern mixture and
//! compares it with the exact mixture denoiser on held-out triples.
//!
//! `cargo run --release --example train_denoiser -- [iterations] [out.ckpt]`

use diip::core::diffusion::{
    held_out_errors, train_denoiser_with, AnalyticGmmDenoiser, Dataset, NoiseSchedule, TimeSampling, TrainConfig,
};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("diip_example.ckpt").display().to_string());

    let sched = NoiseSchedule::default();
    let gmm = presets::gmm()?;
    let data = Dataset::Gmm(gmm.clone());
    let cfg = TrainConfig {
        iterations,
        ..presets::train_config(0)
    };
    let (model, report) = train_denoiser_with(&data, &sched, presets::model_config(), &cfg, |step, loss| {
        if step % 100 == 0 {
            println!("step {step:5}  loss {loss:.5}");
        }
    })?;
    report.checkpoint.write(&out)?;
    println!("tail loss {:.5}, checkpoint {out}", report.tail_loss(100));

    let exact = AnalyticGmmDenoiser::new(gmm, sched);
    let (excess, irreducible) = held_out_errors(&model, &exact, &data, 300, TimeSampling::Uniform, 99)?;
    println!("held-out excess {excess:.5} vs irreducible {irreducible:.5}");
    Ok(())
}
