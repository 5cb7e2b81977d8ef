//! Forward degradation operators that turn clean images into benchmark
//! inputs. Restoration never links against this crate.

use std::path::{Path, PathBuf};

use diip_core::error::{Error, Result};
use diip_core::image::{convolve2d, resample, Border, Direction, Image, Kernel2D, Shape};
use diip_core::{io, rng};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub mod jpeg;

/// Standard deviation of the additive noise that follows every operator.
pub const DEFAULT_NOISE_FLOOR: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    GaussianNoise { sigma: f64 },
    /// `x + n1 + x * n2`, Gaussian `n1` and multiplicative (speckle) `n2`.
    SpeckleMix { sigma_g: f64, sigma_s: f64 },
    GaussianBlur { size: usize, sigma: f64 },
    /// Blur, stride-subsample, nearest-neighbour upsample back.
    DownsampleSr { factor: usize, size: usize, sigma: f64 },
    /// Block-DCT quantization with a quality-scaled table.
    JpegBlock { quality: u32 },
    /// Bilinear resampling along a smooth random displacement field.
    SmoothWarp { amplitude: f64, correlation: f64 },
}

impl Degradation {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::GaussianNoise { .. } => "gaussian_noise",
            Self::SpeckleMix { .. } => "speckle_mix",
            Self::GaussianBlur { .. } => "gaussian_blur",
            Self::DownsampleSr { .. } => "downsample_sr",
            Self::JpegBlock { .. } => "jpeg_block",
            Self::SmoothWarp { .. } => "smooth_warp",
        }
    }

    pub fn speckle_default() -> Self {
        Self::SpeckleMix {
            sigma_g: 0.2,
            sigma_s: 0.22,
        }
    }

    /// 9x9 Gaussian, sigma 2 for x4 and 3 for x8 (1 for x2).
    pub fn super_resolution(factor: usize) -> Self {
        let sigma = match factor {
            8 => 3.0,
            4 => 2.0,
            _ => 1.0,
        };
        Self::DownsampleSr {
            factor,
            size: 9,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::invalid(format!("{}: {what}", self.kind())));
        match *self {
            Self::GaussianNoise { sigma } if !(0.0..=1.0).contains(&sigma) => bad(format!("sigma {sigma} outside [0, 1]")),
            Self::SpeckleMix { sigma_g, sigma_s }
                if !(0.0..=1.0).contains(&sigma_g) || !(0.0..=1.0).contains(&sigma_s) =>
            {
                bad(format!("sigmas ({sigma_g}, {sigma_s}) outside [0, 1]"))
            }
            Self::GaussianBlur { size, sigma } | Self::DownsampleSr { size, sigma, .. }
                if size % 2 == 0 || !(sigma > 0.0 && sigma <= 16.0) =>
            {
                bad(format!("kernel size {size} must be odd and sigma {sigma} in (0, 16]"))
            }
            Self::DownsampleSr { factor, .. } if !(1..=16).contains(&factor) => bad(format!("factor {factor} outside 1..=16")),
            Self::JpegBlock { quality } if !(1..=100).contains(&quality) => bad(format!("quality {quality} outside 1..=100")),
            Self::SmoothWarp { amplitude, correlation }
                if !(0.0..=8.0).contains(&amplitude) || !(correlation > 0.0 && correlation <= 64.0) =>
            {
                bad(format!("amplitude {amplitude} must be in [0, 8] px, correlation {correlation} in (0, 64]"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the operator removes detail (blur-like) rather than adding it.
    pub fn is_smoothing(&self) -> bool {
        matches!(self, Self::GaussianBlur { .. } | Self::DownsampleSr { .. } | Self::SmoothWarp { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub op: Degradation,
    /// Additive Gaussian noise applied after the operator; 0 disables it.
    pub noise_floor: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(op: Degradation, seed: u64) -> Self {
        Self {
            op,
            noise_floor: DEFAULT_NOISE_FLOOR,
            seed,
        }
    }

    pub fn without_floor(self) -> Self {
        Self {
            noise_floor: 0.0,
            ..self
        }
    }

    pub fn kind(&self) -> &'static str {
        self.op.kind()
    }

    /// Operator parameters and noise floor as a JSON object (no kind, no seed).
    pub fn params_json(&self) -> String {
        let mut v = serde_json::to_value(self.op).expect("plain data");
        let obj = v.as_object_mut().expect("tagged enum serializes to an object");
        obj.remove("kind");
        obj.insert("noise_floor".into(), self.noise_floor.into());
        v.to_string()
    }

    pub fn from_parts(kind: &str, params_json: &str, seed: u64) -> Result<Self> {
        let mut v: serde_json::Value =
            serde_json::from_str(params_json).map_err(|e| Error::invalid(format!("params {params_json:?}: {e}")))?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| Error::invalid(format!("params {params_json:?} is not an object")))?;
        let noise_floor = obj.remove("noise_floor").and_then(|f| f.as_f64()).unwrap_or(DEFAULT_NOISE_FLOOR);
        obj.insert("kind".into(), kind.into());
        let op: Degradation = serde_json::from_value(v).map_err(|e| Error::invalid(format!("{kind}: {e}")))?;
        Ok(Self { op, noise_floor, seed })
    }
}

/// Applies the operator and then the additive noise floor.
pub fn apply(spec: &DegradationSpec, x: &Image) -> Result<Image> {
    spec.op.validate()?;
    if !(spec.noise_floor.is_finite() && spec.noise_floor >= 0.0) {
        return Err(Error::invalid(format!("noise floor {} must be nonnegative", spec.noise_floor)));
    }
    let mut r = rng::rng_stream(spec.seed, 1);
    let out = match spec.op {
        Degradation::GaussianNoise { sigma } => {
            let n = rng::normal_image(x.shape(), &mut r);
            x.axpby(1.0, &n, sigma)?
        }
        Degradation::SpeckleMix { sigma_g, sigma_s } => {
            let n1 = rng::normal_image(x.shape(), &mut r);
            let n2 = rng::normal_image(x.shape(), &mut r);
            let speckle = x.zip_map(&n2, |v, n| v * n)?;
            x.axpby(1.0, &n1, sigma_g)?.axpby(1.0, &speckle, sigma_s)?
        }
        Degradation::GaussianBlur { size, sigma } => convolve2d(x, &Kernel2D::gaussian(size, sigma)?, Border::Reflect)?,
        Degradation::DownsampleSr { factor, size, sigma } => {
            if x.height() % factor != 0 || x.width() % factor != 0 {
                return Err(Error::invalid(format!(
                    "downsample_sr: {}x{} not divisible by {factor}",
                    x.height(),
                    x.width()
                )));
            }
            let blurred = convolve2d(x, &Kernel2D::gaussian(size, sigma)?, Border::Reflect)?;
            resample(&resample(&blurred, factor, Direction::Down)?, factor, Direction::Up)?
        }
        Degradation::JpegBlock { quality } => jpeg::compress(x, quality)?,
        Degradation::SmoothWarp { amplitude, correlation } => smooth_warp(x, amplitude, correlation, &mut r)?,
    };
    if spec.noise_floor > 0.0 {
        let n = rng::normal_image(x.shape(), &mut rng::rng_stream(spec.seed, 2));
        out.axpby(1.0, &n, spec.noise_floor)
    } else {
        Ok(out)
    }
}

/// Smooth field: white noise blurred at the correlation length, scaled to
/// unit RMS.
fn smooth_field(shape: Shape, correlation: f64, r: &mut impl Rng) -> Result<Vec<f64>> {
    let plane = Shape::new(shape.height, shape.width, 1);
    let noise = rng::normal_image(plane, r);
    let max_size = shape.height.min(shape.width);
    let want = 2 * (2.0 * correlation).ceil() as usize + 1;
    let size = if want <= max_size { want } else { max_size - (1 - max_size % 2) };
    let field = convolve2d(&noise, &Kernel2D::gaussian(size, correlation)?, Border::Reflect)?;
    let rms = (field.data().iter().map(|v| v * v).sum::<f64>() / field.data().len() as f64).sqrt();
    Ok(field.data().iter().map(|v| v / rms.max(1e-12)).collect())
}

fn smooth_warp(x: &Image, amplitude: f64, correlation: f64, r: &mut impl Rng) -> Result<Image> {
    let s = x.shape();
    let dy = smooth_field(s, correlation, r)?;
    let dx = smooth_field(s, correlation, r)?;
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    Ok(Image::from_fn(s, |y, xx, c| {
        let i = y * s.width + xx;
        let sy = clamp(y as f64 + amplitude * dy[i], s.height);
        let sx = clamp(xx as f64 + amplitude * dx[i], s.width);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(s.height - 1), (x0 + 1).min(s.width - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let top = (1.0 - fx) * x.get(y0, x0, c) + fx * x.get(y0, x1, c);
        let bottom = (1.0 - fx) * x.get(y1, x0, c) + fx * x.get(y1, x1, c);
        (1.0 - fy) * top + fy * bottom
    }))
}

/// One line of a benchmark manifest; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean_path: PathBuf,
    pub degraded_path: Option<PathBuf>,
    pub spec: Option<DegradationSpec>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 5] = ["clean_path", "degraded_path", "kind", "params", "seed"];

/// How clean images are paired with specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// Every image under every spec.
    #[default]
    Cross,
    /// Image `i` under spec `i mod specs.len()` only: a mixed benchmark with
    /// one input per clean image.
    Cycle,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(Self::Cross),
            "cycle" => Ok(Self::Cycle),
            other => Err(Error::invalid(format!("layout {other:?} is not cross or cycle"))),
        }
    }
}

/// Writes every clean image and every (image, spec) degradation, plus
/// `manifest.csv`. Each input uses its spec's seed mixed with the image index.
pub fn make_benchmark(
    dataset: &[Image],
    specs: &[DegradationSpec],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestEntry>> {
    make_benchmark_with(dataset, specs, out_dir, Layout::Cross)
}

pub fn make_benchmark_with(
    dataset: &[Image],
    specs: &[DegradationSpec],
    out_dir: impl AsRef<Path>,
    layout: Layout,
) -> Result<Vec<ManifestEntry>> {
    let out_dir = out_dir.as_ref();
    if dataset.is_empty() {
        return Err(Error::invalid("benchmark dataset is empty"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for (i, x) in dataset.iter().enumerate() {
        let clean = PathBuf::from(format!("clean_{i:03}.dimg"));
        io::write_dimg(out_dir.join(&clean), x)?;
        if specs.is_empty() {
            entries.push(ManifestEntry {
                clean_path: clean.clone(),
                degraded_path: None,
                spec: None,
            });
        }
        for (j, spec) in specs.iter().enumerate() {
            if layout == Layout::Cycle && j != i % specs.len() {
                continue;
            }
            let spec = DegradationSpec {
                seed: rng::derive_seed(spec.seed, i as u64),
                ..*spec
            };
            let y = apply(&spec, x)?;
            let degraded = PathBuf::from(format!("degraded_{i:03}_{j:02}_{}.dimg", spec.kind()));
            io::write_dimg(out_dir.join(&degraded), &y)?;
            entries.push(ManifestEntry {
                clean_path: clean.clone(),
                degraded_path: Some(degraded),
                spec: Some(spec),
            });
        }
    }
    write_manifest(&entries, out_dir.join(MANIFEST_FILE))?;
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(MANIFEST_HEADER).map_err(err)?;
    for e in entries {
        let (kind, params, seed) = match &e.spec {
            Some(s) => (s.kind().to_string(), s.params_json(), s.seed.to_string()),
            None => Default::default(),
        };
        let degraded = e.degraded_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        w.write_record([e.clean_path.display().to_string(), degraded, kind, params, seed])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut rd = csv::Reader::from_path(path).map_err(err)?;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(err)?;
        let f = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let spec = if f(2).is_empty() {
            None
        } else {
            let seed = f(4)
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad seed {:?}", path.display(), f(4))))?;
            Some(DegradationSpec::from_parts(&f(2), &f(3), seed)?)
        };
        out.push(ManifestEntry {
            clean_path: PathBuf::from(f(0)),
            degraded_path: Some(f(1)).filter(|s| !s.is_empty()).map(PathBuf::from),
            spec,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image {
        Image::from_fn(Shape::new(16, 16, 1), |y, x, _| (y * 16 + x) as f64 / 255.0)
    }

    #[test]
    fn zero_noise_without_floor_is_identity() {
        let spec = DegradationSpec::new(Degradation::GaussianNoise { sigma: 0.0 }, 1).without_floor();
        assert_eq!(apply(&spec, &ramp()).unwrap(), ramp());
    }

    #[test]
    fn seeded_and_deterministic() {
        let spec = DegradationSpec::new(Degradation::speckle_default(), 4);
        assert_eq!(apply(&spec, &ramp()).unwrap(), apply(&spec, &ramp()).unwrap());
        let other = DegradationSpec { seed: 5, ..spec };
        assert_ne!(apply(&spec, &ramp()).unwrap(), apply(&other, &ramp()).unwrap());
    }

    #[test]
    fn parameter_ranges() {
        for op in [
            Degradation::GaussianNoise { sigma: -0.1 },
            Degradation::GaussianBlur { size: 4, sigma: 1.0 },
            Degradation::JpegBlock { quality: 0 },
            Degradation::SmoothWarp {
                amplitude: 20.0,
                correlation: 4.0,
            },
        ] {
            assert!(apply(&DegradationSpec::new(op, 0), &ramp()).is_err(), "{op:?}");
        }
        let sr = DegradationSpec::new(Degradation::super_resolution(3), 0);
        assert!(apply(&sr, &ramp()).is_err());
    }

    #[test]
    fn params_round_trip() {
        for op in [
            Degradation::speckle_default(),
            Degradation::super_resolution(4),
            Degradation::JpegBlock { quality: 5 },
            Degradation::SmoothWarp {
                amplitude: 1.5,
                correlation: 4.0,
            },
        ] {
            let s = DegradationSpec::new(op, 9);
            assert_eq!(DegradationSpec::from_parts(s.kind(), &s.params_json(), 9).unwrap(), s);
        }
    }

    #[test]
    fn super_resolution_output_is_block_constant() {
        let spec = DegradationSpec::new(Degradation::super_resolution(4), 0).without_floor();
        let y = apply(&spec, &ramp()).unwrap();
        for by in 0..4 {
            for bx in 0..4 {
                let v = y.get(by * 4, bx * 4, 0);
                for i in 0..4 {
                    for j in 0..4 {
                        assert_eq!(y.get(by * 4 + i, bx * 4 + j, 0), v);
                    }
                }
            }
        }
    }

    #[test]
    fn warp_with_zero_amplitude_is_identity() {
        let spec = DegradationSpec::new(
            Degradation::SmoothWarp {
                amplitude: 0.0,
                correlation: 4.0,
            },
            2,
        )
        .without_floor();
        assert_eq!(apply(&spec, &ramp()).unwrap(), ramp());
    }
}
