//! The two self-supervised stopping rules and the full restoration procedure.
//!
//! * low-frequency: after `k_min`, the first drop of the Laplacian variance
//!   returns the most recent sharpness peak;
//! * high-frequency: once the loss is still non-increasing but its normalized
//!   slope has flattened below `eps`, return iteration `k - tau`.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::diffusion::{DdimSampler, Denoiser};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::inversion::{init_latent, run_inversion, Control, InversionConfig, Observer};
use crate::trajectory::{Record, Slope, Trajectory};

pub use crate::trajectory::normalized_slope;

pub const DEFAULT_K_MIN: usize = 100;
pub const DEFAULT_EPSILON: f64 = 0.001;
/// Window used when slope smoothing is switched on.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopConfig {
    pub k_min: usize,
    pub eps: f64,
    pub tau: usize,
    /// Trailing moving-average length for the slope; 1 disables smoothing.
    pub smoothing: usize,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            k_min: DEFAULT_K_MIN,
            eps: DEFAULT_EPSILON,
            tau: 0,
            smoothing: 1,
        }
    }
}

impl StopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 2 {
            return Err(Error::invalid(format!("k_min must be at least 2, got {}", self.k_min)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::invalid(format!("eps must be a nonnegative number, got {}", self.eps)));
        }
        if self.smoothing == 0 {
            return Err(Error::invalid("slope smoothing window must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    High,
    Low,
    /// Neither rule fired within the budget.
    None,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::High => "high",
            Criterion::Low => "low",
            Criterion::None => "none",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(Criterion::High),
            "low" => Ok(Criterion::Low),
            "none" => Ok(Criterion::None),
            _ => Err(Error::invalid(format!("unknown criterion {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub criterion: Criterion,
    /// Iteration whose reconstruction is returned.
    pub n_star: usize,
    /// Iteration at which the rule fired.
    pub fired_at: usize,
}

/// Bookkeeping of both detectors over one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StopState {
    pub last_sharpness_peak_iter: Option<usize>,
    pub detected_h: bool,
    pub detected_l: bool,
    pub n_star: Option<usize>,
    fired_at: Option<usize>,
    lap_history: Vec<f64>,
    slope_history: Vec<Slope>,
}

impl StopState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_frozen(&self) -> bool {
        self.detected_h || self.detected_l
    }

    pub fn detection(&self) -> Option<Detection> {
        let criterion = if self.detected_h {
            Criterion::High
        } else if self.detected_l {
            Criterion::Low
        } else {
            return None;
        };
        Some(Detection {
            criterion,
            n_star: self.n_star?,
            fired_at: self.fired_at?,
        })
    }

    pub fn lap_history(&self) -> &[f64] {
        &self.lap_history
    }

    /// Appends `lap_k` and updates the last peak when `k - 1` is a strict
    /// local maximum.
    pub fn observe_sharpness(&mut self, k: usize, lap_k: f64) {
        if self.is_frozen() {
            return;
        }
        debug_assert_eq!(k, self.lap_history.len());
        self.lap_history.push(lap_k);
        if k >= 2 {
            let h = &self.lap_history;
            if h[k - 2] < h[k - 1] && h[k] < h[k - 1] {
                self.last_sharpness_peak_iter = Some(k - 1);
            }
        }
    }

    /// Fires when `k > k_min` and the sharpness dropped since `k - 1`.
    pub fn check_low_freq(&mut self, k: usize, lap_k: f64, lap_prev: f64, cfg: &StopConfig) -> bool {
        if self.is_frozen() || k <= cfg.k_min || lap_k >= lap_prev {
            return false;
        }
        self.detected_l = true;
        self.n_star = Some(self.last_sharpness_peak_iter.unwrap_or_else(|| argmax(&self.lap_history)));
        self.fired_at = Some(k);
        true
    }

    /// Appends a raw slope and returns the (possibly smoothed) value the
    /// high-frequency rule compares.
    pub fn observe_slope(&mut self, delta: Slope, cfg: &StopConfig) -> Option<f64> {
        self.slope_history.push(delta);
        let defined: Vec<f64> = self
            .slope_history
            .iter()
            .rev()
            .take(cfg.smoothing.max(1))
            .filter_map(|s| s.value())
            .collect();
        if defined.is_empty() || delta.value().is_none() {
            return None;
        }
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Fires when `k > tau` and `-eps < delta <= 0`.
    pub fn check_high_freq(&mut self, k: usize, delta: Option<f64>, cfg: &StopConfig) -> bool {
        let Some(d) = delta else { return false };
        if self.is_frozen() || k <= cfg.tau || d > 0.0 || d.abs() >= cfg.eps {
            return false;
        }
        self.detected_h = true;
        self.n_star = Some(k - cfg.tau);
        self.fired_at = Some(k);
        true
    }

    /// One iteration in the fixed order: sharpness tracking, low check,
    /// high check.
    pub fn step(&mut self, record: &Record, cfg: &StopConfig) -> Option<Detection> {
        if self.is_frozen() {
            return self.detection();
        }
        let k = record.k;
        self.observe_sharpness(k, record.lap_var);
        if k >= 1 {
            let prev = self.lap_history[k - 1];
            self.check_low_freq(k, record.lap_var, prev, cfg);
        }
        let slope = self.observe_slope(record.delta, cfg);
        self.check_high_freq(k, slope, cfg);
        self.detection()
    }

    /// What to return when nothing fired: the last peak, else the sharpest.
    pub fn fallback_iter(&self) -> Option<usize> {
        if self.lap_history.is_empty() {
            return None;
        }
        Some(self.last_sharpness_peak_iter.unwrap_or_else(|| argmax(&self.lap_history)))
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Both detectors attached to a live run.
pub struct StopObserver {
    pub config: StopConfig,
    pub state: StopState,
    /// End the run on the first detection.
    pub halt: bool,
}

impl StopObserver {
    pub fn new(config: StopConfig) -> Self {
        Self {
            config,
            state: StopState::new(),
            halt: true,
        }
    }
}

impl Observer for StopObserver {
    fn observe(&mut self, record: &Record, _: &Image, _: &Trajectory) -> Control {
        match self.state.step(record, &self.config) {
            Some(_) if self.halt => Control::Halt,
            _ => Control::Continue,
        }
    }
}

/// Outcome of running the detectors over a finished record sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub criterion: Criterion,
    pub n_star: usize,
    /// Iteration at which a rule fired, `None` for the fallback.
    pub fired_at: Option<usize>,
}

/// Drives the detectors from saved records without re-running inversion.
pub fn replay(records: &[Record], cfg: &StopConfig) -> Result<Selection> {
    cfg.validate()?;
    let mut st = StopState::new();
    for r in records {
        if let Some(d) = st.step(r, cfg) {
            return Ok(Selection {
                criterion: d.criterion,
                n_star: d.n_star,
                fired_at: Some(d.fired_at),
            });
        }
    }
    let n_star = st
        .fallback_iter()
        .ok_or_else(|| Error::invalid("cannot select an iterate from an empty trajectory"))?;
    Ok(Selection {
        criterion: Criterion::None,
        n_star,
        fired_at: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestoreConfig {
    pub stop: StopConfig,
    pub inversion: InversionConfig,
    pub stride: usize,
    pub seed: u64,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            stop: StopConfig::default(),
            inversion: InversionConfig::default(),
            stride: crate::diffusion::sampler::DEFAULT_STRIDE,
            seed: 0,
        }
    }
}

impl RestoreConfig {
    /// Canonical one-line description; its digest identifies a result.
    pub fn canonical(&self) -> String {
        let a = &self.inversion.adam;
        format!(
            "k_min={};eps={:?};tau={};smoothing={};lr={:?};beta1={:?};beta2={:?};adam_eps={:?};max_iters={};window={};stride={};seed={}",
            self.stop.k_min,
            self.stop.eps,
            self.stop.tau,
            self.stop.smoothing,
            a.lr,
            a.beta1,
            a.beta2,
            a.eps,
            self.inversion.max_iters,
            self.inversion.window,
            self.stride,
            self.seed
        )
    }

    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.canonical().as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub criterion: Criterion,
    pub n_star: usize,
    pub iters_run: usize,
    pub loss_at_stop: f64,
    pub lap_var_at_stop: f64,
    pub config_hash: String,
    pub slope_smoothing: usize,
    /// Reference PSNR of the returned iterate, when a reference was given.
    pub psnr_at_stop: Option<f64>,
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "criterion = {}\nn_star = {}\niters_run = {}\nloss_at_stop = {:?}\nlap_var_at_stop = {:?}\nconfig_hash = {}\nslope_smoothing = {}\n",
            self.criterion,
            self.n_star,
            self.iters_run,
            self.loss_at_stop,
            self.lap_var_at_stop,
            self.config_hash,
            self.slope_smoothing
        );
        if let Some(p) = self.psnr_at_stop {
            s.push_str(&format!("psnr_at_stop = {p:?}\n"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub image: Image,
    pub report: Report,
    pub trajectory: Trajectory,
}

/// Restores `y`: inversion with both detectors attached, returning the
/// reconstruction of the selected iteration. `reference` only adds PSNR
/// columns to the trajectory; it never influences the stop.
pub fn diip_restore<D: Denoiser>(
    y: &Image,
    denoiser: &D,
    cfg: &RestoreConfig,
    reference: Option<&Image>,
) -> Result<Restoration> {
    cfg.stop.validate()?;
    if cfg.stop.tau >= cfg.inversion.window {
        return Err(Error::invalid(format!(
            "tau = {} needs a snapshot window larger than {}",
            cfg.stop.tau, cfg.inversion.window
        )));
    }
    let g = DdimSampler::new(denoiser, cfg.stride)?;
    let init = init_latent(denoiser.image_shape(), cfg.seed);
    let mut obs = StopObserver::new(cfg.stop);
    let run = run_inversion(y, &g, init, &cfg.inversion, reference, &mut [&mut obs])?;
    let traj = run.trajectory;
    let iters_run = traj.last().map_or(0, |r| r.k);
    let (criterion, n_star) = match obs.state.detection() {
        Some(d) => (d.criterion, d.n_star),
        None => (
            Criterion::None,
            obs.state.fallback_iter().expect("at least one record"),
        ),
    };
    let image = traj
        .snapshot(n_star)
        .cloned()
        .ok_or_else(|| Error::invalid(format!("iteration {n_star} is no longer held in the snapshot store")))?;
    let rec = traj.records()[n_star];
    let report = Report {
        criterion,
        n_star,
        iters_run,
        loss_at_stop: rec.loss,
        lap_var_at_stop: rec.lap_var,
        config_hash: cfg.hash(),
        slope_smoothing: cfg.stop.smoothing,
        psnr_at_stop: rec.psnr_ref,
    };
    Ok(Restoration {
        image,
        report,
        trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(k: usize, lap: f64, delta: Slope) -> Record {
        Record {
            k,
            loss: 1.0,
            delta,
            lap_var: lap,
            psnr_ref: None,
        }
    }

    #[test]
    fn peak_pattern() {
        let mut s = StopState::new();
        for (k, l) in [1.0, 3.0, 2.0].into_iter().enumerate() {
            s.observe_sharpness(k, l);
        }
        assert_eq!(s.last_sharpness_peak_iter, Some(1));
        let mut s = StopState::new();
        for k in 0..50 {
            s.observe_sharpness(k, k as f64);
        }
        assert_eq!(s.last_sharpness_peak_iter, None);
    }

    #[test]
    fn low_rule_boundary_and_fallback() {
        let cfg = StopConfig::default();
        let mut s = StopState::new();
        assert!(!s.check_low_freq(100, 1.0, 2.0, &cfg));
        s.last_sharpness_peak_iter = Some(40);
        assert!(s.check_low_freq(101, 1.0, 2.0, &cfg));
        assert_eq!(s.n_star, Some(40));
        assert!(s.detected_l && !s.detected_h);
        // Frozen afterwards.
        assert!(!s.check_high_freq(102, Some(-1e-5), &cfg));
        assert_eq!(s.n_star, Some(40));

        let mut s = StopState::new();
        for (k, l) in [5.0, 4.0, 3.0].into_iter().enumerate() {
            s.observe_sharpness(k, l);
        }
        let cfg = StopConfig { k_min: 2, ..cfg };
        assert!(!s.check_low_freq(2, 3.0, 4.0, &cfg));
        s.observe_sharpness(3, 2.0);
        assert!(s.check_low_freq(3, 2.0, 3.0, &cfg));
        assert_eq!(s.n_star, Some(0));
    }

    #[test]
    fn high_rule_cases() {
        let cfg = StopConfig::default();
        let mut s = StopState::new();
        assert!(!s.check_high_freq(5, Some(-0.5), &cfg));
        assert!(!s.check_high_freq(5, Some(0.0004), &cfg));
        assert!(s.check_high_freq(200, Some(-0.0005), &cfg));
        assert_eq!(s.n_star, Some(200));
        let mut s = StopState::new();
        let cfg = StopConfig { tau: 3, ..cfg };
        assert!(!s.check_high_freq(3, Some(0.0), &cfg));
        assert!(s.check_high_freq(4, Some(0.0), &cfg));
        assert_eq!(s.n_star, Some(1));
    }

    #[test]
    fn smoothing_averages_trailing_slopes() {
        let cfg = StopConfig {
            smoothing: 3,
            ..StopConfig::default()
        };
        let mut s = StopState::new();
        assert_eq!(s.observe_slope(Slope::Undefined, &cfg), None);
        assert_eq!(s.observe_slope(Slope::Value(-0.3), &cfg), Some(-0.3));
        assert_eq!(s.observe_slope(Slope::Value(-0.1), &cfg), Some(-0.2));
        let v = s.observe_slope(Slope::ExactFit, &cfg).unwrap();
        assert!((v + 0.4 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn low_check_precedes_high_check() {
        let cfg = StopConfig {
            k_min: 2,
            ..StopConfig::default()
        };
        let mut s = StopState::new();
        let seq = [
            rec(0, 1.0, Slope::Undefined),
            rec(1, 3.0, Slope::Value(-0.5)),
            rec(2, 2.0, Slope::Value(-0.5)),
            rec(3, 1.0, Slope::Value(-0.0001)),
        ];
        let mut det = None;
        for r in &seq {
            det = s.step(r, &cfg);
        }
        let d = det.unwrap();
        assert_eq!(d.criterion, Criterion::Low);
        assert_eq!(d.n_star, 1);
        assert_eq!(d.fired_at, 3);
    }

    #[test]
    fn replay_reports_fallback() {
        let seq: Vec<Record> = (0..10).map(|k| rec(k, k as f64, Slope::Value(-0.5))).collect();
        let sel = replay(&seq, &StopConfig::default()).unwrap();
        assert_eq!(sel.criterion, Criterion::None);
        assert_eq!(sel.n_star, 9);
        assert!(replay(&[], &StopConfig::default()).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = RestoreConfig::default();
        let b = RestoreConfig {
            stop: StopConfig {
                eps: 0.005,
                ..a.stop
            },
            ..a
        };
        assert_eq!(a.hash(), RestoreConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
