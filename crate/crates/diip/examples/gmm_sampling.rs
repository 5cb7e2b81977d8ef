//! Coarse DDIM sampling through the exact mixture denoiser: every sample
//! should land next to one of the pattern means.

use diip::core::diffusion::sampler::DEFAULT_STRIDE;
use diip::core::diffusion::{ddim_generate, AnalyticGmmDenoiser, NoiseSchedule};
use diip::core::rng;
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let gmm = presets::gmm()?;
    let den = AnalyticGmmDenoiser::new(gmm.clone(), NoiseSchedule::default());
    let mut r = rng::rng(11);
    let n = 200;
    let mut hits = vec![0usize; gmm.components()];
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let z = rng::normal_image(presets::shape(), &mut r);
        let x = ddim_generate(&z, &den, DEFAULT_STRIDE)?;
        let (j, d2) = gmm
            .means()
            .iter()
            .enumerate()
            .map(|(j, m)| (j, x.sum_sq_diff(m).unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        hits[j] += 1;
        worst = worst.max((d2 / x.data().len() as f64).sqrt());
    }
    println!("{n} samples, per-component counts {hits:?}");
    println!("largest RMS distance to the nearest mean: {worst:.4} (component std {})", presets::PATTERN_STD);
    Ok(())
}
