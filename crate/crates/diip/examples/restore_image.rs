//! Restores one blurred and one noisy image with the full stop rule and
//! reports which detector fired.

use diip::core::diffusion::{AnalyticGmmDenoiser, NoiseSchedule};
use diip::core::image::psnr;
use diip::core::stopping::diip_restore;
use diip::degrade::{apply, DegradationSpec};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let den = AnalyticGmmDenoiser::new(presets::gmm()?, NoiseSchedule::default());
    let clean = presets::clean_images(2, 21)?;
    let cfg = presets::restore_config(0);
    for (x, op) in clean.iter().zip([presets::blur(), presets::noise()]) {
        let y = apply(&DegradationSpec::new(op, 3), x)?;
        let out = diip_restore(&y, &den, &cfg, Some(x))?;
        let r = &out.report;
        println!(
            "{:<14} input {:5.2} dB -> {:5.2} dB  ({} rule, n* = {}, {} iterations)",
            op.kind(),
            psnr(&y, x, 1.0)?,
            psnr(&out.image, x, 1.0)?,
            r.criterion,
            r.n_star,
            r.iters_run
        );
    }
    Ok(())
}
