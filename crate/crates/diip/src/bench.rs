//! Benchmark harness: one full inversion per input, every stop rule variant
//! evaluated online against that single trajectory, plus the reference
//! oracle (trajectory argmax of PSNR).

use std::path::Path;

use diip_core::diffusion::{DdimSampler, Denoiser};
use diip_core::error::{Error, Result};
use diip_core::image::{laplacian_variance, psnr, ssim, Image};
use diip_core::inversion::{init_latent, run_inversion, Control, Observer};
use diip_core::io;
use diip_core::stopping::{Criterion, RestoreConfig, Selection, StopConfig, StopState};
use diip_core::trajectory::{Record, Trajectory};
use diip_degrade::ManifestEntry;
use rayon::prelude::*;

/// One clean/degraded pair.
#[derive(Debug, Clone)]
pub struct BenchInput {
    pub name: String,
    pub kind: String,
    pub clean: Image,
    pub degraded: Image,
}

/// Reads every degraded entry of a manifest together with its clean image.
pub fn load_inputs(dir: &Path, entries: &[ManifestEntry]) -> Result<Vec<BenchInput>> {
    entries
        .iter()
        .filter_map(|e| Some((e, e.degraded_path.as_ref()?, e.spec.as_ref()?)))
        .map(|(e, deg, spec)| {
            Ok(BenchInput {
                name: deg.display().to_string(),
                kind: spec.kind().to_string(),
                clean: io::read_dimg(dir.join(&e.clean_path))?,
                degraded: io::read_dimg(dir.join(deg))?,
            })
        })
        .collect()
}

/// A named stop rule evaluated on each trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    /// `(parameter, value)`, e.g. `("eps", "0.001")`; the default rule is
    /// `("default", "")`.
    pub param: String,
    pub value: String,
    pub stop: StopConfig,
}

impl Variant {
    pub fn default_rule(stop: StopConfig) -> Self {
        Self {
            param: "default".into(),
            value: String::new(),
            stop,
        }
    }
}

/// The default rule followed by one-parameter sweeps of `eps` and `k_min`.
pub fn ablation_variants(base: StopConfig, eps: &[f64], k_min: &[usize]) -> Vec<Variant> {
    let mut v = vec![Variant::default_rule(base)];
    v.extend(eps.iter().map(|&e| Variant {
        param: "eps".into(),
        value: format!("{e}"),
        stop: StopConfig { eps: e, ..base },
    }));
    v.extend(k_min.iter().map(|&k| Variant {
        param: "k_min".into(),
        value: k.to_string(),
        stop: StopConfig { k_min: k, ..base },
    }));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub selection: Selection,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct ImageResult {
    pub name: String,
    pub kind: String,
    pub psnr_input: f64,
    /// One entry per variant, in the order given.
    pub scored: Vec<Scored>,
    pub oracle_k: usize,
    pub oracle_psnr: f64,
    pub oracle_ssim: f64,
    /// Largest sharpness over the trajectory divided by the clean image's.
    pub peak_sharpness: f64,
    pub records: Vec<Record>,
}

impl ImageResult {
    /// Oracle minus the default rule, in dB; never negative.
    pub fn gap(&self) -> f64 {
        self.oracle_psnr - self.scored[0].psnr
    }
}

/// Runs every stop rule side by side and keeps the image each one selects.
struct MultiStop {
    rules: Vec<(StopConfig, StopState, Option<Image>)>,
}

impl Observer for MultiStop {
    fn observe(&mut self, record: &Record, _: &Image, traj: &Trajectory) -> Control {
        for (cfg, st, img) in &mut self.rules {
            if st.is_frozen() {
                continue;
            }
            if let Some(d) = st.step(record, cfg) {
                *img = traj.snapshot(d.n_star).cloned();
            }
        }
        Control::Continue
    }
}

/// Full-budget inversion of one input, scored under every variant.
pub fn run_one<D: Denoiser>(den: &D, input: &BenchInput, cfg: &RestoreConfig, variants: &[Variant]) -> Result<ImageResult> {
    if variants.is_empty() {
        return Err(Error::invalid("at least one stop rule is needed"));
    }
    for v in variants {
        v.stop.validate()?;
        if v.stop.tau >= cfg.inversion.window {
            return Err(Error::invalid(format!("tau = {} exceeds the snapshot window", v.stop.tau)));
        }
    }
    let g = DdimSampler::new(den, cfg.stride)?;
    let init = init_latent(den.image_shape(), cfg.seed);
    let mut multi = MultiStop {
        rules: variants.iter().map(|v| (v.stop, StopState::new(), None)).collect(),
    };
    let run = run_inversion(&input.degraded, &g, init, &cfg.inversion, Some(&input.clean), &mut [&mut multi])?;
    let traj = run.trajectory;
    let records = traj.records().to_vec();

    let mut scored = Vec::with_capacity(variants.len());
    for (_, st, img) in multi.rules {
        let selection = match st.detection() {
            Some(d) => Selection {
                criterion: d.criterion,
                n_star: d.n_star,
                fired_at: Some(d.fired_at),
            },
            None => Selection {
                criterion: Criterion::None,
                n_star: st.fallback_iter().expect("non-empty trajectory"),
                fired_at: None,
            },
        };
        let img = match img {
            Some(i) => i,
            None => traj
                .snapshot(selection.n_star)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("snapshot {} was not retained", selection.n_star)))?,
        };
        scored.push(Scored {
            selection,
            psnr: psnr(&img, &input.clean, 1.0)?,
            ssim: ssim(&img, &input.clean)?,
        });
    }
    let (oracle_k, oracle_img) = traj.best_reference().expect("reference given");
    let clean_lv = laplacian_variance(&input.clean)?;
    let peak = records.iter().map(|r| r.lap_var).fold(0.0, f64::max);
    Ok(ImageResult {
        name: input.name.clone(),
        kind: input.kind.clone(),
        psnr_input: psnr(&input.degraded, &input.clean, 1.0)?,
        scored,
        oracle_k,
        oracle_psnr: psnr(oracle_img, &input.clean, 1.0)?,
        oracle_ssim: ssim(oracle_img, &input.clean)?,
        peak_sharpness: peak / clean_lv.max(1e-12),
        records,
    })
}

/// Runs [`run_one`] over all inputs on `workers` threads. Results keep input
/// order; failures are returned per input.
pub fn run_bench<D: Denoiser + Sync>(
    den: &D,
    inputs: &[BenchInput],
    cfg: &RestoreConfig,
    variants: &[Variant],
    workers: usize,
) -> Result<Vec<Result<ImageResult>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    Ok(pool.install(|| inputs.par_iter().map(|i| run_one(den, i, cfg, variants)).collect()))
}

/// Mean PSNR and SSIM per variant over the given results.
pub fn aggregate<'a>(results: impl IntoIterator<Item = &'a ImageResult>, n_variants: usize) -> Vec<(f64, f64)> {
    let mut sums = vec![(0.0, 0.0); n_variants];
    let mut n = 0usize;
    for r in results {
        for (s, sc) in sums.iter_mut().zip(&r.scored) {
            s.0 += sc.psnr;
            s.1 += sc.ssim;
        }
        n += 1;
    }
    sums.into_iter()
        .map(|(p, s)| (p / n.max(1) as f64, s / n.max(1) as f64))
        .collect()
}

pub const RESULTS_HEADER: [&str; 12] = [
    "image",
    "kind",
    "psnr_input",
    "criterion",
    "n_star",
    "fired_at",
    "psnr_self",
    "ssim_self",
    "k_oracle",
    "psnr_oracle",
    "ssim_oracle",
    "gap",
];

pub fn write_results_csv(path: &Path, results: &[ImageResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RESULTS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in results {
        let s = &r.scored[0];
        w.write_record([
            r.name.clone(),
            r.kind.clone(),
            format!("{:.6}", r.psnr_input),
            s.selection.criterion.to_string(),
            s.selection.n_star.to_string(),
            s.selection.fired_at.map_or("NA".into(), |k| k.to_string()),
            format!("{:.6}", s.psnr),
            format!("{:.6}", s.ssim),
            r.oracle_k.to_string(),
            format!("{:.6}", r.oracle_psnr),
            format!("{:.6}", r.oracle_ssim),
            format!("{:.6}", r.gap()),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per variant: `param,value,mean_psnr,mean_ssim,images`.
pub fn write_ablation_csv(path: &Path, variants: &[Variant], results: &[ImageResult]) -> Result<()> {
    let agg = aggregate(results, variants.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["param", "value", "mean_psnr", "mean_ssim", "images"])
        .map_err(|e| csv_err(path, e))?;
    for (v, (p, s)) in variants.iter().zip(agg) {
        w.write_record([
            v.param.clone(),
            v.value.clone(),
            format!("{p:.6}"),
            format!("{s:.6}"),
            results.len().to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}
