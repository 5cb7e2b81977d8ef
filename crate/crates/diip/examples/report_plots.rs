//! Plots the loss slope and sharpness curves of a blurred and a noisy run.

use diip::cli::smoothed_slopes;
use diip::core::diffusion::{AnalyticGmmDenoiser, NoiseSchedule};
use diip::core::io::write_png;
use diip::core::stopping::diip_restore;
use diip::degrade::{apply, DegradationSpec};
use diip::plot::{line_plot, Scale, Series};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let den = AnalyticGmmDenoiser::new(presets::gmm()?, NoiseSchedule::default());
    let clean = presets::clean_images(2, 40)?;
    let mut cfg = presets::restore_config(0);
    cfg.inversion.max_iters = 400;
    cfg.stop.k_min = usize::MAX / 2;
    cfg.stop.eps = 0.0;

    let (mut slopes, mut sharp) = (Vec::new(), Vec::new());
    for (x, op) in clean.iter().zip([presets::blur(), presets::noise()]) {
        let y = apply(&DegradationSpec::new(op, 1), x)?;
        let rec = diip_restore(&y, &den, &cfg, Some(x))?.trajectory.records().to_vec();
        slopes.push(smoothed_slopes(&rec, 5));
        sharp.push(rec.iter().map(|r| (r.k as f64, r.lap_var)).collect::<Series>());
    }
    let dir = std::env::temp_dir();
    for (name, series, scale) in [("diip_delta.png", &slopes, Scale::LogAbs), ("diip_lap_var.png", &sharp, Scale::Linear)] {
        if let Some(img) = line_plot(series, scale) {
            let path = dir.join(name);
            write_png(&path, &img)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
