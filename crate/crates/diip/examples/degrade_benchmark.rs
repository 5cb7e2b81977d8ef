//! Builds a small mixed benchmark on disk and prints its manifest.

use diip::core::image::psnr;
use diip::core::io;
use diip::degrade::{make_benchmark_with, Layout};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let dir = std::env::temp_dir().join("diip_example_bench");
    let clean = presets::clean_images(8, 5)?;
    let entries = make_benchmark_with(&clean, &presets::mixed_specs(1), &dir, Layout::Cycle)?;
    for e in &entries {
        let (Some(deg), Some(spec)) = (&e.degraded_path, &e.spec) else { continue };
        let x = io::read_dimg(dir.join(&e.clean_path))?;
        let y = io::read_dimg(dir.join(deg))?;
        println!("{:<36} {:<14} {:6.2} dB", deg.display(), spec.kind(), psnr(&y, &x, 1.0)?);
    }
    println!("written to {}", dir.display());
    Ok(())
}
