//! `DIIP-IMG/1` float rasters and 8-bit PNG views.
//!
//! A `DIIP-IMG/1` file is the ASCII header `DIIPIMG 1 <height> <width> <channels>\n`
//! followed by little-endian `f32` samples, row-major, channels interleaved.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Shape};

const MAGIC: &str = "DIIPIMG";
const VERSION: u32 = 1;

pub fn encode_dimg(img: &Image) -> Vec<u8> {
    let s = img.shape();
    let mut out = format!("{MAGIC} {VERSION} {} {} {}\n", s.height, s.width, s.channels).into_bytes();
    out.reserve(s.len() * 4);
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_dimg(bytes: &[u8]) -> Result<Image> {
    let bad = |reason: String| Error::Format {
        kind: "DIIP-IMG",
        reason,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 5 || fields[0] != MAGIC {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let nums: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(format!("header field: {e}")))?;
    if nums[0] != VERSION as usize {
        return Err(bad(format!("unsupported version {}", nums[0])));
    }
    let shape = Shape::new(nums[1], nums[2], nums[3]);
    let payload = &bytes[nl + 1..];
    if payload.len() != shape.len() * 4 {
        return Err(bad(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            shape.len() * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::from_vec(shape, data)
}

pub fn write_dimg(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dimg(img)).map_err(|e| Error::io(path, e))
}

pub fn read_dimg(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dimg(&bytes)
}

/// Writes an 8-bit PNG after clamping to `[0, 1]`.
pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let color = if s.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        s.width as u32,
        s.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Png {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a PNG as grayscale or RGB in `[0, 1]`.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|source| Error::Png {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, raw) = if dynimg.color().has_color() {
        (3, dynimg.to_rgb8().into_raw())
    } else {
        (1, dynimg.to_luma8().into_raw())
    };
    let data = raw.into_iter().map(|b| b as f64 / 255.0).collect();
    Image::from_vec(Shape::new(h, w, channels), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimg_header_layout() {
        let img = Image::from_vec(Shape::new(1, 2, 1), vec![0.5, -1.0]).unwrap();
        let bytes = encode_dimg(&img);
        assert!(bytes.starts_with(b"DIIPIMG 1 1 2 1\n"));
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-1.0f32).to_le_bytes());
        assert_eq!(decode_dimg(&bytes).unwrap(), img);
    }

    #[test]
    fn dimg_rejects_truncation() {
        let img = Image::filled(Shape::new(3, 3, 3), 0.25);
        let bytes = encode_dimg(&img);
        assert!(decode_dimg(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_dimg(b"DIIPIMG 2 1 1 1\n\0\0\0\0").is_err());
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(Shape::new(4, 5, 3), |y, x, c| (y + x + c) as f64 / 10.0);
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a.clamp(0.0, 1.0) - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
