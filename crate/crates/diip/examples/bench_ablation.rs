//! A small mixed benchmark scored under the default rule and one-parameter
//! sweeps of eps and k_min. Uses a shortened budget so it finishes quickly.

use diip::bench::{ablation_variants, aggregate, load_inputs, run_bench};
use diip::core::diffusion::{AnalyticGmmDenoiser, NoiseSchedule};
use diip::degrade::{make_benchmark_with, Layout};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let dir = std::env::temp_dir().join("diip_example_ablation");
    let entries = make_benchmark_with(&presets::clean_images(4, 17)?, &presets::mixed_specs(9), &dir, Layout::Cycle)?;
    let inputs = load_inputs(&dir, &entries)?;

    let den = AnalyticGmmDenoiser::new(presets::gmm()?, NoiseSchedule::default());
    let mut cfg = presets::restore_config(0);
    cfg.inversion.max_iters = 500;
    let variants = ablation_variants(cfg.stop, &[0.005, 0.0005], &[50, 150]);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let results: Vec<_> = run_bench(&den, &inputs, &cfg, &variants, workers)?
        .into_iter()
        .collect::<Result<_, _>>()?;

    for r in &results {
        let s = &r.scored[0];
        println!(
            "{:<12} {:<5} n* {:4}  {:5.2} dB  oracle {:5.2} dB at {}",
            r.kind, s.selection.criterion, s.selection.n_star, s.psnr, r.oracle_psnr, r.oracle_k
        );
    }
    for (v, (p, s)) in variants.iter().zip(aggregate(&results, variants.len())) {
        println!("{:<8} {:<7} mean PSNR {p:5.2}  SSIM {s:.3}", v.param, v.value);
    }
    Ok(())
}
