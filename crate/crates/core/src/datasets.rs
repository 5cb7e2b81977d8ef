//! Synthetic clean-image sources at desk resolution: structured pattern
//! mixtures (stripes, checkers, edges, disks), smooth blobs and striped
//! textures.

use rand::Rng;

use crate::diffusion::GmmModel;
use crate::error::{Error, Result};
use crate::image::{convolve2d, Border, Image, Kernel2D, Shape};
use crate::rng;

/// Default per-pixel standard deviation of each pattern component.
pub const DEFAULT_PATTERN_STD: f64 = 0.02;
pub const DEFAULT_PATTERN_COMPONENTS: usize = 16;

const LO: f64 = 0.15;
const HI: f64 = 0.85;

/// Mixture component means: a deterministic cycle over pattern families
/// with seed-dependent periods, phases, positions and colours.
pub fn pattern_means(shape: Shape, k: usize, seed: u64) -> Result<Vec<Image>> {
    if shape.is_empty() || k == 0 {
        return Err(Error::invalid("pattern set needs a non-empty shape and k > 0"));
    }
    let mut r = rng::rng(seed);
    let (h, w) = (shape.height as f64, shape.width as f64);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let tint: Vec<f64> = (0..shape.channels).map(|_| r.random_range(0.7..=1.0)).collect();
        let (a, b) = if r.random_bool(0.5) { (LO, HI) } else { (HI, LO) };
        let pick = |on: bool, c: usize| if on { b * tint[c] } else { a * tint[c] };
        let img = match i % 6 {
            0 | 1 => {
                let period = r.random_range(5..=9) as f64;
                let phase = r.random_range(0.0..period);
                let vertical = i % 6 == 1;
                Image::from_fn(shape, |y, x, c| {
                    let u = if vertical { x } else { y } as f64 + phase;
                    pick((u / period).fract() < 0.5, c)
                })
            }
            2 => {
                let cell = r.random_range(3..=5);
                Image::from_fn(shape, |y, x, c| pick((y / cell + x / cell) % 2 == 0, c))
            }
            3 => {
                let theta = r.random_range(0.0..std::f64::consts::TAU);
                let off = r.random_range(-0.2..0.2) * h.min(w);
                let (s, co) = theta.sin_cos();
                Image::from_fn(shape, |y, x, c| {
                    let d = (x as f64 - w / 2.0) * co + (y as f64 - h / 2.0) * s;
                    pick(d > off, c)
                })
            }
            4 => {
                let rad = r.random_range(0.2..0.35) * h.min(w);
                let cy = r.random_range(0.35..0.65) * h;
                let cx = r.random_range(0.35..0.65) * w;
                Image::from_fn(shape, |y, x, c| pick((y as f64 - cy).hypot(x as f64 - cx) < rad, c))
            }
            _ => {
                let y0 = r.random_range(0..shape.height / 2);
                let x0 = r.random_range(0..shape.width / 2);
                let side = r.random_range(shape.height / 4..=shape.height / 2).max(1);
                Image::from_fn(shape, |y, x, c| {
                    pick((y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x), c)
                })
            }
        };
        out.push(img);
    }
    Ok(out)
}

/// Equal-weight mixture over [`pattern_means`].
pub fn pattern_gmm(shape: Shape, k: usize, std: f64, seed: u64) -> Result<GmmModel> {
    GmmModel::uniform(pattern_means(shape, k, seed)?, std)
}

/// A few Gaussian bumps on a flat background, blurred once more.
pub fn smooth_blobs(shape: Shape, r: &mut impl Rng) -> Image {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let mut img = Image::filled(shape, r.random_range(0.2..0.4));
    for _ in 0..r.random_range(2..=4) {
        let (cy, cx) = (r.random_range(0.0..h), r.random_range(0.0..w));
        let s = r.random_range(0.1..0.25) * h.min(w);
        let amp = r.random_range(0.2..0.5);
        let col: Vec<f64> = (0..shape.channels).map(|_| r.random_range(0.6..=1.0)).collect();
        img = Image::from_fn(shape, |y, x, c| {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            img.get(y, x, c) + amp * col[c] * (-d2 / (2.0 * s * s)).exp()
        });
    }
    let k = Kernel2D::gaussian(3, 0.7).expect("valid kernel");
    convolve2d(&img, &k, Border::Reflect).expect("same shape").clamp01()
}

/// An oriented sinusoidal grating.
pub fn striped_texture(shape: Shape, r: &mut impl Rng) -> Image {
    let theta = r.random_range(0.0..std::f64::consts::PI);
    let freq = r.random_range(0.5..1.2);
    let phase = r.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    Image::from_fn(shape, |y, x, _| 0.5 + 0.35 * (freq * (x as f64 * c + y as f64 * s) + phase).sin())
}
