//! JPEG-like block transform coding: 8x8 orthonormal DCT of each channel in
//! 0..255 units, quantization with a quality-scaled luminance table, inverse
//! DCT. No chroma subsampling and no entropy coding.

use diip_core::error::{Error, Result};
use diip_core::image::{Image, Shape};

pub const BLOCK: usize = 8;

/// The standard JPEG luminance quantization table.
pub const LUMA_TABLE: [[f64; 8]; 8] = [
    [16., 11., 10., 16., 24., 40., 51., 61.],
    [12., 12., 14., 19., 26., 58., 60., 55.],
    [14., 13., 16., 24., 40., 57., 69., 56.],
    [14., 17., 22., 29., 51., 87., 80., 62.],
    [18., 22., 37., 56., 68., 109., 103., 77.],
    [24., 35., 55., 64., 81., 104., 113., 92.],
    [49., 64., 78., 87., 103., 121., 120., 101.],
    [72., 92., 95., 98., 112., 100., 103., 99.],
];

/// `LUMA_TABLE * (100 - q) / 50`, floored to integers and clamped to at least 1.
pub fn quant_table(quality: u32) -> Result<[[f64; 8]; 8]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("JPEG quality {quality} outside 1..=100")));
    }
    let scale = (100 - quality) as f64 / 50.0;
    let mut t = [[0.0; 8]; 8];
    for (row, base) in t.iter_mut().zip(LUMA_TABLE) {
        for (q, b) in row.iter_mut().zip(base) {
            *q = (b * scale).floor().max(1.0);
        }
    }
    Ok(t)
}

fn basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (u, row) in c.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    c
}

/// `C B C^T`.
pub fn dct8(block: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let c = basis();
    let mut tmp = [[0.0; 8]; 8];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u][x] = (0..8).map(|y| c[u][y] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for u in 0..8 {
        for v in 0..8 {
            out[u][v] = (0..8).map(|x| tmp[u][x] * c[v][x]).sum();
        }
    }
    out
}

/// `C^T F C`.
pub fn idct8(coef: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let c = basis();
    let mut tmp = [[0.0; 8]; 8];
    for y in 0..8 {
        for v in 0..8 {
            tmp[y][v] = (0..8).map(|u| c[u][y] * coef[u][v]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for y in 0..8 {
        for x in 0..8 {
            out[y][x] = (0..8).map(|v| tmp[y][v] * c[v][x]).sum();
        }
    }
    out
}

/// Quantizes every 8x8 block; sides that are not multiples of 8 are padded by
/// edge replication and cropped afterwards.
pub fn compress(x: &Image, quality: u32) -> Result<Image> {
    let table = quant_table(quality)?;
    let s = x.shape();
    let ph = s.height.div_ceil(BLOCK) * BLOCK;
    let pw = s.width.div_ceil(BLOCK) * BLOCK;
    let mut out = Image::zeros(s);
    for c in 0..s.channels {
        for by in (0..ph).step_by(BLOCK) {
            for bx in (0..pw).step_by(BLOCK) {
                let mut block = [[0.0; 8]; 8];
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let y = (by + i).min(s.height - 1);
                        let xx = (bx + j).min(s.width - 1);
                        *v = 255.0 * x.get(y, xx, c);
                    }
                }
                let mut coef = dct8(&block);
                for (row, qrow) in coef.iter_mut().zip(&table) {
                    for (f, q) in row.iter_mut().zip(qrow) {
                        *f = (*f / q).round() * q;
                    }
                }
                let rec = idct8(&coef);
                for (i, row) in rec.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        if by + i < s.height && bx + j < s.width {
                            out.set(by + i, bx + j, c, v / 255.0);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Largest distance of any block coefficient from the quantization lattice,
/// in units of the step. Sides must be multiples of 8.
pub fn lattice_residual(x: &Image, quality: u32) -> Result<f64> {
    let table = quant_table(quality)?;
    let s: Shape = x.shape();
    if s.height % BLOCK != 0 || s.width % BLOCK != 0 {
        return Err(Error::invalid("lattice check needs sides divisible by 8"));
    }
    let mut worst: f64 = 0.0;
    for c in 0..s.channels {
        for by in (0..s.height).step_by(BLOCK) {
            for bx in (0..s.width).step_by(BLOCK) {
                let mut block = [[0.0; 8]; 8];
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = 255.0 * x.get(by + i, bx + j, c);
                    }
                }
                for (row, qrow) in dct8(&block).iter().zip(&table) {
                    for (f, q) in row.iter().zip(qrow) {
                        let r = f / q;
                        worst = worst.max((r - r.round()).abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}
