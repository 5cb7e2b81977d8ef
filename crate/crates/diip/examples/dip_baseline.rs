//! Deep Image Prior on a noisy image: the fit passes through a clean
//! reconstruction before it reproduces the noise.

use diip::core::image::psnr;
use diip::degrade::{apply, DegradationSpec};
use diip::dip::{dip_run, DipConfig};
use diip::presets;

fn main() -> diip::core::error::Result<()> {
    let x = presets::clean_images(1, 30)?.remove(0);
    let y = apply(&DegradationSpec::new(presets::noise(), 4), &x)?;
    let cfg = DipConfig {
        max_iters: 800,
        ..DipConfig::default()
    };
    let run = dip_run(&y, &cfg, Some(&x), &mut [])?;
    let rec = run.trajectory.records();
    let (k, best) = rec
        .iter()
        .filter_map(|r| Some((r.k, r.psnr_ref?)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    println!("input {:.2} dB", psnr(&y, &x, 1.0)?);
    println!("best {best:.2} dB at k = {k}, final {:.2} dB", rec.last().unwrap().psnr_ref.unwrap());
    for r in rec.iter().step_by(100) {
        println!("k {:4}  loss {:.5}  psnr {:.2}", r.k, r.loss, r.psnr_ref.unwrap());
    }
    Ok(())
}
