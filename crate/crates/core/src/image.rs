//! Floating-point rasters and the deterministic image primitives used by the
//! sampler, the stopping criteria and the benchmark harness.
//!
//! Samples are stored row-major with channels interleaved (`HWC`), nominally
//! in `[0, 1]`. Every operation returns a fresh image and leaves its inputs
//! untouched.

use std::fmt;

use crate::error::{Error, Result};

/// Returned by [`psnr`] when the two images are identical.
pub const DEFAULT_PSNR_CAP: f64 = 99.0;

/// Side length of the Gaussian window used by [`ssim`].
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.channels != 1 && shape.channels != 3 {
            return Err(Error::invalid(format!(
                "channel count must be 1 or 3, got {}",
                shape.channels
            )));
        }
        if shape.height == 0 || shape.width == 0 {
            return Err(Error::invalid("image dimensions must be nonzero"));
        }
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} samples for {shape}", shape.len()),
                actual: format!("{} samples", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let idx = (y * self.shape.width + x) * self.shape.channels + c;
        self.data[idx] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.to_string(),
                actual: other.shape.to_string(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.ensure_same_shape(other)?;
        Ok(Image {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &Image, beta: f64) -> Result<Image> {
        self.zip_map(other, |a, b| alpha * a + beta * b)
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    pub fn sum_sq_diff(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Single-channel luminance; grayscale images are returned as a copy.
    pub fn luminance(&self) -> Image {
        if self.shape.channels == 1 {
            return self.clone();
        }
        let shape = Shape::new(self.shape.height, self.shape.width, 1);
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
            .collect();
        Image { shape, data }
    }

    /// Extracts one channel as a grayscale image.
    pub fn channel(&self, c: usize) -> Image {
        let shape = Shape::new(self.shape.height, self.shape.width, 1);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.shape.channels)
            .copied()
            .collect();
        Image { shape, data }
    }
}

/// Square correlation kernel with an odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::ShapeMismatch {
                expected: format!("{} taps", size * size),
                actual: format!("{} taps", weights.len()),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("kernel taps must be finite"));
        }
        Ok(Self { size, weights })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn box_filter(size: usize) -> Result<Self> {
        let n = (size * size) as f64;
        Self::new(size, vec![1.0 / n; size * size])
    }

    /// Truncated, renormalized Gaussian.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
        }
        let r = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let dy = i as f64 - r;
                let dx = j as f64 - r;
                w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Self::new(size, w)
    }

    /// The 4-neighbour discrete Laplacian stencil.
    pub fn laplacian() -> Self {
        Self {
            size: 3,
            weights: vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Border {
    /// Mirror about the edge sample without repeating it (`dcb|abcd|cba`).
    #[default]
    Reflect,
    Replicate,
    Zero,
}

#[inline]
fn border_index(i: isize, n: usize, border: Border) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match border {
        Border::Zero => None,
        Border::Replicate => Some(i.clamp(0, n - 1) as usize),
        Border::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let mut m = i.rem_euclid(period);
            if m >= n {
                m = period - m;
            }
            Some(m as usize)
        }
    }
}

/// Per-channel 2-D correlation; the output has the input's shape.
pub fn convolve2d(img: &Image, k: &Kernel2D, border: Border) -> Result<Image> {
    let Shape {
        height: h,
        width: w,
        channels: ch,
    } = img.shape;
    if k.size > h || k.size > w {
        return Err(Error::KernelTooLarge);
    }
    let r = (k.size / 2) as isize;
    let mut out = Image::zeros(img.shape);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for i in 0..k.size {
                    let Some(sy) = border_index(y as isize + i as isize - r, h, border) else {
                        continue;
                    };
                    for j in 0..k.size {
                        let Some(sx) = border_index(x as isize + j as isize - r, w, border)
                        else {
                            continue;
                        };
                        acc += k.at(i, j) * img.get(sy, sx, c);
                    }
                }
                out.set(y, x, c, acc);
            }
        }
    }
    Ok(out)
}

/// Population variance of the Laplacian response over interior pixels,
/// measured on luminance for colour input.
pub fn laplacian_variance(img: &Image) -> Result<f64> {
    if img.height() < 3 || img.width() < 3 {
        return Err(Error::TooSmallForLaplacian);
    }
    let lum = img.luminance();
    let (h, w) = (lum.height(), lum.width());
    let d = lum.data();
    let n = ((h - 2) * (w - 2)) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = y * w + x;
            let r = d[c - w] + d[c + w] + d[c - 1] + d[c + 1] - 4.0 * d[c];
            sum += r;
            sum_sq += r * r;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    Ok(a.sum_sq_diff(b)? / a.data.len() as f64)
}

/// PSNR in dB with the default cap for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    psnr_with_cap(a, b, peak, DEFAULT_PSNR_CAP)
}

pub fn psnr_with_cap(a: &Image, b: &Image, peak: f64, cap: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("PSNR peak must be > 0, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(cap);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(cap))
}

fn ssim_window() -> Vec<f64> {
    Kernel2D::gaussian(SSIM_WINDOW, SSIM_SIGMA)
        .expect("valid SSIM window")
        .weights
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows of the
/// luminance images, unit dynamic range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::TooSmallForSsim {
            window: SSIM_WINDOW,
        });
    }
    let la = a.luminance();
    let lb = b.luminance();
    let win = ssim_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (h, w) = (la.height(), la.width());
    let (da, db) = (la.data(), lb.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let g = win[i * SSIM_WINDOW + j];
                    let idx = (y0 + i) * w + x0 + j;
                    let (va, vb) = (da[idx], db[idx]);
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// Stride subsampling (`Down`) or nearest-neighbour replication (`Up`).
pub fn resample(img: &Image, factor: usize, direction: Direction) -> Result<Image> {
    if factor == 0 {
        return Err(Error::invalid("resample factor must be positive"));
    }
    let s = img.shape;
    match direction {
        Direction::Down => {
            if s.height % factor != 0 || s.width % factor != 0 {
                return Err(Error::invalid(format!(
                    "image {s} not divisible by downsampling factor {factor}"
                )));
            }
            let out = Shape::new(s.height / factor, s.width / factor, s.channels);
            Ok(Image::from_fn(out, |y, x, c| img.get(y * factor, x * factor, c)))
        }
        Direction::Up => {
            let out = Shape::new(s.height * factor, s.width * factor, s.channels);
            Ok(Image::from_fn(out, |y, x, c| img.get(y / factor, x / factor, c)))
        }
    }
}
