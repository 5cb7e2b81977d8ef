//! Sharpness and fidelity of a clean image under each degradation.

use diip::core::image::{laplacian_variance, psnr, ssim};
use diip::degrade::{apply, DegradationSpec};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let x = presets::clean_images(1, 3)?.remove(0);
    println!("{:<16} {:>9} {:>8} {:>6}", "kind", "lap var", "PSNR", "SSIM");
    println!("{:<16} {:9.4} {:>8} {:>6}", "clean", laplacian_variance(&x)?, "-", "-");
    for kind in ["gaussian_noise", "speckle_mix", "gaussian_blur", "downsample_sr", "jpeg_block", "smooth_warp"] {
        let op = presets::by_kind(kind).unwrap();
        let y = apply(&DegradationSpec::new(op, 1), &x)?;
        println!("{kind:<16} {:9.4} {:8.2} {:6.3}", laplacian_variance(&y)?, psnr(&y, &x, 1.0)?, ssim(&y, &x)?);
    }
    Ok(())
}
