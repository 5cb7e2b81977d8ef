//! Runs one inversion to its full budget, then replays the stop rule under
//! several settings without touching the sampler again.

use diip::core::diffusion::{AnalyticGmmDenoiser, DdimSampler, NoiseSchedule};
use diip::core::inversion::{init_latent, run_inversion};
use diip::core::stopping::{replay, StopConfig};
use diip::core::trajectory::argmax_psnr;
use diip::degrade::{apply, DegradationSpec};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let den = AnalyticGmmDenoiser::new(presets::gmm()?, NoiseSchedule::default());
    let x = presets::clean_images(1, 8)?.remove(0);
    let y = apply(&DegradationSpec::new(presets::noise(), 2), &x)?;
    let cfg = presets::restore_config(0);
    let g = DdimSampler::new(&den, cfg.stride)?;
    let inv = cfg.inversion;
    let run = run_inversion(&y, &g, init_latent(presets::shape(), cfg.seed), &inv, Some(&x), &mut [])?;
    let records = run.trajectory.records();
    let (k_best, p_best) = argmax_psnr(records).unwrap();
    println!("{} iterations, best PSNR {p_best:.2} dB at k = {k_best}", records.len() - 1);

    for eps in [0.005, 0.001, 0.0005] {
        for k_min in [50, 100] {
            let stop = StopConfig { eps, k_min, ..StopConfig::default() };
            let s = replay(records, &stop)?;
            let p = records[s.n_star].psnr_ref.unwrap_or(f64::NAN);
            println!("eps {eps:<7} k_min {k_min:<4} -> {:<5} n* = {:4}  {p:.2} dB", s.criterion, s.n_star);
        }
    }
    Ok(())
}
