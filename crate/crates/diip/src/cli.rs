//! The five commands behind the `diip` binary. Each takes a resolved
//! [`RunConfig`], writes into its `out` directory (always including the
//! echoed effective configuration) and returns a short human summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use diip_core::diffusion::{
    held_out_errors, train_denoiser_with, AnalyticGmmDenoiser, AnyDenoiser, Dataset, NoiseSchedule, TimeSampling,
};
use diip_core::error::{Error, Result};
use diip_core::image::{laplacian_variance, Image};
use diip_core::inversion::InversionConfig;
use diip_core::io;
use diip_core::optim::AdamConfig;
use diip_core::stopping::{diip_restore, Criterion, RestoreConfig, StopConfig};
use diip_core::trajectory::{read_records_csv, write_records_csv, Record};
use diip_degrade::{make_benchmark_with, read_manifest, DegradationSpec, Layout, MANIFEST_FILE};
use diip_dip::{dip_run, DipConfig};
use rayon::prelude::*;

use crate::bench::{ablation_variants, load_inputs, run_bench, write_ablation_csv, write_results_csv, ImageResult};
use crate::config::{Resolver, RunConfig, ECHO_FILE};
use crate::plot::{line_plot, Scale, Series};
use crate::presets;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Degrade,
    Restore,
    Bench,
    Report,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Self::Train,
            "degrade" => Self::Degrade,
            "restore" => Self::Restore,
            "bench" => Self::Bench,
            "report" => Self::Report,
            other => return Err(Error::invalid(format!("unknown command {other:?}"))),
        })
    }
}

/// 1 for numerical failures, 2 for usage and I/O problems.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } => 1,
        _ => 2,
    }
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<String> {
    match cmd {
        Command::Train => train(cfg),
        Command::Degrade => degrade(cfg),
        Command::Restore => restore(cfg),
        Command::Bench => bench(cfg),
        Command::Report => report(cfg),
    }
}

fn out_dir(r: &mut Resolver) -> Result<PathBuf> {
    let out = PathBuf::from(r.require("out")?);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

/// Writes the effective configuration with a version header; parsing the
/// file back gives the same settings.
pub fn echo_config(out: &Path, effective: &RunConfig) -> Result<()> {
    let path = out.join(ECHO_FILE);
    let text = format!("# diip {VERSION}\n{effective}");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => io::read_png(path),
        _ => io::read_dimg(path),
    }
}

fn load_denoiser(path: &str) -> Result<AnyDenoiser> {
    AnyDenoiser::load(path)
}

fn restore_config(r: &mut Resolver) -> Result<RestoreConfig> {
    let base = presets::restore_config(0);
    let stop = StopConfig {
        k_min: r.get("k_min", base.stop.k_min)?,
        eps: r.get("eps", base.stop.eps)?,
        tau: r.get("tau", base.stop.tau)?,
        smoothing: r.get("smoothing", base.stop.smoothing)?,
    };
    let inversion = InversionConfig {
        adam: AdamConfig::with_lr(r.get("lr", base.inversion.adam.lr)?),
        max_iters: r.get("max_iters", base.inversion.max_iters)?,
        ..base.inversion
    };
    Ok(RestoreConfig {
        stop,
        inversion,
        stride: r.get("stride", base.stride)?,
        seed: r.seed()?,
    })
}

// train -----------------------------------------------------------------

fn train(cfg: &RunConfig) -> Result<String> {
    let mut r = Resolver::new(cfg);
    let out = out_dir(&mut r)?;
    let model: String = r.get("model", "conv".to_string())?;
    let seed = r.seed()?;
    let gmm = presets::gmm()?;
    let sched = NoiseSchedule::default();
    let oracle = AnalyticGmmDenoiser::new(gmm.clone(), sched.clone());
    let mut summary = String::new();
    match model.as_str() {
        "gmm" => {
            let eff = r.finish()?;
            oracle.to_checkpoint().write(out.join("model.ckpt"))?;
            echo_config(&out, &eff)?;
            writeln!(summary, "wrote analytic mixture denoiser to {}", out.join("model.ckpt").display()).ok();
        }
        "conv" => {
            let base = presets::train_config(seed);
            let tc = diip_core::diffusion::TrainConfig {
                iterations: r.get("iters", base.iterations)?,
                batch_size: r.get("batch", base.batch_size)?,
                lr: r.get("lr", base.lr)?,
                ..base
            };
            let eval_samples: usize = r.get("eval_samples", 500)?;
            let eff = r.finish()?;
            let data = Dataset::Gmm(gmm);
            let (den, rep) = train_denoiser_with(&data, &sched, presets::model_config(), &tc, |_, _| {})?;
            rep.checkpoint.write(out.join("model.ckpt"))?;
            let path = out.join("train_loss.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(["step", "loss"]).map_err(|e| csv_err(&path, e))?;
            for (i, l) in rep.losses.iter().enumerate() {
                w.write_record([i.to_string(), format!("{l:?}")]).map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            let mut eval = format!("checkpoint_digest = {}\n", rep.checkpoint.digest());
            if eval_samples > 0 {
                let (excess, irreducible) = held_out_errors(
                    &den,
                    &oracle,
                    &data,
                    eval_samples,
                    TimeSampling::Uniform,
                    seed.wrapping_add(1),
                )?;
                writeln!(eval, "held_out_excess_mse = {excess:?}\nirreducible_mse = {irreducible:?}").ok();
                writeln!(eval, "ratio = {:?}", excess / irreducible).ok();
            }
            write_text(&out.join("eval.txt"), &eval)?;
            echo_config(&out, &eff)?;
            writeln!(summary, "trained {} steps, tail loss {:.5}", tc.iterations, rep.tail_loss(100)).ok();
            summary.push_str(&eval);
        }
        other => return Err(Error::invalid(format!("model {other:?} is not conv or gmm"))),
    }
    Ok(summary)
}

// degrade ---------------------------------------------------------------

const DEFAULT_KINDS: [&str; 4] = ["speckle_mix", "jpeg_block", "gaussian_blur", "smooth_warp"];

fn degrade(cfg: &RunConfig) -> Result<String> {
    let mut r = Resolver::new(cfg);
    let out = out_dir(&mut r)?;
    let n: usize = r.get("images", 20)?;
    let layout: String = r.get("layout", "cycle".to_string())?;
    let layout: Layout = layout.parse()?;
    let kinds: Vec<String> = r.list("kinds", &DEFAULT_KINDS.map(String::from))?;
    let seed = r.seed()?;
    let eff = r.finish()?;
    let specs = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let op = presets::by_kind(k).ok_or_else(|| Error::invalid(format!("unknown degradation kind {k:?}")))?;
            Ok(DegradationSpec::new(op, diip_core::rng::derive_seed(seed, i as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    let clean = presets::clean_images(n, seed)?;
    let entries = make_benchmark_with(&clean, &specs, &out, layout)?;
    echo_config(&out, &eff)?;
    Ok(format!(
        "wrote {} clean images and {} degraded inputs to {}\n",
        clean.len(),
        entries.iter().filter(|e| e.degraded_path.is_some()).count(),
        out.display()
    ))
}

// restore ---------------------------------------------------------------

fn restore(cfg: &RunConfig) -> Result<String> {
    let mut r = Resolver::new(cfg);
    let out = out_dir(&mut r)?;
    let ckpt = r.require("checkpoint")?;
    let input = PathBuf::from(r.require("input")?);
    let reference = r.optional("reference").map(PathBuf::from);
    let rc = restore_config(&mut r)?;
    let eff = r.finish()?;
    let den = load_denoiser(&ckpt)?;
    let y = read_image(&input)?;
    let reference = reference.as_deref().map(read_image).transpose()?;
    let res = diip_restore(&y, &den, &rc, reference.as_ref())?;
    io::write_dimg(out.join("restored.dimg"), &res.image)?;
    io::write_png(out.join("restored.png"), &res.image)?;
    write_text(&out.join("report.txt"), &res.report.to_text())?;
    res.trajectory.write_csv(out.join("trajectory.csv"))?;
    echo_config(&out, &eff)?;
    Ok(res.report.to_text())
}

// bench -----------------------------------------------------------------

fn bench(cfg: &RunConfig) -> Result<String> {
    let mut r = Resolver::new(cfg);
    let out = out_dir(&mut r)?;
    let data = PathBuf::from(r.require("data")?);
    let ckpt = r.require("checkpoint")?;
    let rc = restore_config(&mut r)?;
    let eps_sweep: Vec<f64> = r.list("eps_sweep", &[0.005, 0.001, 0.0005])?;
    let k_min_sweep: Vec<usize> = r.list("k_min_sweep", &[50, 100, 150])?;
    let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers: usize = r.get("workers", default_workers)?;
    let with_dip: bool = r.get("dip", false)?;
    let dip_iters: usize = r.get("dip_iters", diip_dip::DEFAULT_ITERS)?;
    let eff = r.finish()?;

    let den = load_denoiser(&ckpt)?;
    let entries = read_manifest(data.join(MANIFEST_FILE))?;
    let inputs = load_inputs(&data, &entries)?;
    if inputs.is_empty() {
        return Err(Error::invalid(format!("{} lists no degraded inputs", data.display())));
    }
    let variants = ablation_variants(rc.stop, &eps_sweep, &k_min_sweep);
    let outcomes = run_bench(&den, &inputs, &rc, &variants, workers.max(1))?;

    let traj_dir = out.join("trajectories");
    std::fs::create_dir_all(&traj_dir).map_err(|e| Error::io(&traj_dir, e))?;
    let mut ok: Vec<ImageResult> = Vec::new();
    let mut failures = Vec::new();
    for (input, o) in inputs.iter().zip(outcomes) {
        match o {
            Ok(res) => {
                write_records_csv(&res.records, traj_dir.join(trajectory_name(&res.name)))?;
                ok.push(res);
            }
            Err(e) => failures.push((input.name.clone(), e)),
        }
    }
    write_results_csv(&out.join("results.csv"), &ok)?;
    write_ablation_csv(&out.join("ablation.csv"), &variants, &ok)?;
    let mut summary = bench_summary(&ok);
    if with_dip {
        let dip_cfg = DipConfig {
            max_iters: dip_iters,
            seed: rc.seed,
            ..DipConfig::default()
        };
        summary.push_str(&dip_compare(&inputs, &ok, &dip_cfg, workers.max(1), &out.join("dip.csv"))?);
    }
    for (name, e) in &failures {
        writeln!(summary, "FAILED {name}: {e}").ok();
    }
    write_text(&out.join("summary.txt"), &summary)?;
    echo_config(&out, &eff)?;
    if let Some((name, e)) = failures.into_iter().next() {
        return Err(match e {
            Error::NonFinite { iteration, what } => Error::NonFinite {
                iteration,
                what: format!("{name}: {what}"),
            },
            other => Error::invalid(format!("{name}: {other}")),
        });
    }
    Ok(summary)
}

fn trajectory_name(input: &str) -> String {
    let stem = Path::new(input).file_stem().and_then(|s| s.to_str()).unwrap_or(input);
    format!("{stem}.csv")
}

/// Median oracle gap, mean PSNR and criterion counts per degradation kind.
pub fn bench_summary(results: &[ImageResult]) -> String {
    let mut s = String::new();
    let mut gaps: Vec<f64> = results.iter().map(ImageResult::gap).collect();
    gaps.sort_by(f64::total_cmp);
    let median = match gaps.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => gaps[n / 2],
        n => 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]),
    };
    writeln!(s, "images = {}\nmedian_gap_db = {median:.4}", results.len()).ok();
    let mut kinds: Vec<&str> = results.iter().map(|r| r.kind.as_str()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    for kind in kinds {
        let rs: Vec<&ImageResult> = results.iter().filter(|r| r.kind == kind).collect();
        let n = rs.len() as f64;
        let count = |c: Criterion| rs.iter().filter(|r| r.scored[0].selection.criterion == c).count();
        writeln!(
            s,
            "{kind}: n={} psnr_input={:.2} psnr_self={:.2} psnr_oracle={:.2} high={} low={} none={}",
            rs.len(),
            rs.iter().map(|r| r.psnr_input).sum::<f64>() / n,
            rs.iter().map(|r| r.scored[0].psnr).sum::<f64>() / n,
            rs.iter().map(|r| r.oracle_psnr).sum::<f64>() / n,
            count(Criterion::High),
            count(Criterion::Low),
            count(Criterion::None),
        )
        .ok();
    }
    s
}

/// Runs the DIP baseline on every input and compares peak sharpness with
/// the inversion trajectories.
fn dip_compare(
    inputs: &[crate::bench::BenchInput],
    diip: &[ImageResult],
    cfg: &DipConfig,
    workers: usize,
    path: &Path,
) -> Result<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let rows: Vec<Result<(f64, f64)>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|i| {
                let run = dip_run(&i.degraded, cfg, Some(&i.clean), &mut [])?;
                let recs = run.trajectory.records();
                let max_psnr = recs.iter().filter_map(|r| r.psnr_ref).fold(f64::NEG_INFINITY, f64::max);
                let lv = laplacian_variance(&i.clean)?.max(1e-12);
                Ok((max_psnr, recs.iter().map(|r| r.lap_var).fold(0.0, f64::max) / lv))
            })
            .collect()
    });
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["image", "kind", "psnr_input", "dip_max_psnr", "dip_peak_sharpness", "diip_peak_sharpness"])
        .map_err(|e| csv_err(path, e))?;
    let mut wins = 0;
    let mut compared = 0;
    for (i, row) in inputs.iter().zip(rows) {
        let (p, sharp) = row?;
        let Some(d) = diip.iter().find(|d| d.name == i.name) else { continue };
        compared += 1;
        wins += usize::from(d.peak_sharpness > sharp);
        w.write_record([
            i.name.clone(),
            i.kind.clone(),
            format!("{:.6}", d.psnr_input),
            format!("{p:.6}"),
            format!("{sharp:.6}"),
            format!("{:.6}", d.peak_sharpness),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(format!("dip: inversion sharper on {wins} of {compared} inputs\n"))
}

// report ----------------------------------------------------------------

fn report(cfg: &RunConfig) -> Result<String> {
    let mut r = Resolver::new(cfg);
    let out = out_dir(&mut r)?;
    let paths: Vec<String> = r.list("trajectories", &[])?;
    let smoothing: usize = r.get("smoothing", diip_core::stopping::SMOOTHING_WINDOW)?;
    let eff = r.finish()?;
    if paths.is_empty() {
        return Err(Error::invalid("no trajectories given (set `trajectories`)"));
    }
    let mut all = Vec::new();
    for p in &paths {
        let recs = read_records_csv(p)?;
        if recs.is_empty() {
            return Err(Error::invalid(format!("{p}: empty trajectory")));
        }
        all.push(recs);
    }

    let delta: Vec<Series> = all.iter().map(|rs| smoothed_slopes(rs, smoothing)).collect();
    let lap: Vec<Series> = all
        .iter()
        .map(|rs| rs.iter().map(|r| (r.k as f64, r.lap_var)).collect())
        .collect();
    let psnr: Vec<Series> = all
        .iter()
        .map(|rs| rs.iter().filter_map(|r| Some((r.k as f64, r.psnr_ref?))).collect())
        .collect();
    let mut written = Vec::new();
    for (name, series, scale) in [
        ("delta.png", &delta, Scale::LogAbs),
        ("lap_var.png", &lap, Scale::Linear),
        ("psnr.png", &psnr, Scale::Linear),
    ] {
        if let Some(img) = line_plot(series, scale) {
            io::write_png(out.join(name), &img)?;
            written.push(name);
        }
    }

    let path = out.join("minima.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["trajectory", "k_min_delta", "min_delta", "k_max_lap_var", "k_max_psnr"])
        .map_err(|e| csv_err(&path, e))?;
    for (p, (rs, d)) in paths.iter().zip(all.iter().zip(&delta)) {
        let (kd, vd) = d
            .iter()
            .copied()
            .fold((f64::NAN, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let kl = rs.iter().fold((0, f64::NEG_INFINITY), |a, r| if r.lap_var > a.1 { (r.k, r.lap_var) } else { a });
        let kp = diip_core::trajectory::argmax_psnr(rs).map_or("NA".to_string(), |(k, _)| k.to_string());
        w.write_record([p.clone(), format!("{kd}"), format!("{vd:?}"), kl.0.to_string(), kp])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    echo_config(&out, &eff)?;
    Ok(format!("wrote {} and minima.csv for {} trajectories\n", written.join(", "), paths.len()))
}

/// Trailing mean of the defined slopes over `window` iterations.
pub fn smoothed_slopes(records: &[Record], window: usize) -> Series {
    let vals: Vec<Option<f64>> = records.iter().map(|r| r.delta.value()).collect();
    records
        .iter()
        .enumerate()
        .filter(|(i, _)| vals[*i].is_some())
        .map(|(i, r)| {
            let lo = (i + 1).saturating_sub(window.max(1));
            let win: Vec<f64> = vals[lo..=i].iter().flatten().copied().collect();
            (r.k as f64, win.iter().sum::<f64>() / win.len() as f64)
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}
