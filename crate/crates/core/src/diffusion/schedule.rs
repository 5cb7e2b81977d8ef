use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Cumulative signal fractions `alpha_bar[t] = prod_{s<=t} (1 - beta_s)` of a
/// linear beta schedule, with `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 0..steps {
            let beta = beta_start + (beta_end - beta_start) * s as f64 / (steps - 1) as f64;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self {
            steps,
            beta_start,
            beta_end,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::StepOutOfRange { t, max: self.steps });
        }
        Ok(())
    }

    /// `alpha_bar[t]`; panics past `steps`.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    #[inline]
    pub fn signal(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    #[inline]
    pub fn noise(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid defaults")
    }
}

/// Linear-beta schedule; see [`NoiseSchedule::linear`].
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_product() {
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        let ab = s.alpha_bars();
        assert_eq!(ab.len(), 3);
        assert_eq!(ab[0], 1.0);
        assert!((ab[1] - 0.9).abs() < 1e-15);
        assert!((ab[2] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn invalid_ranges() {
        assert!(make_schedule(1, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.02, 1e-4).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn default_schedule_matches_scalar_product() {
        let s = NoiseSchedule::default();
        let mut prod = 1.0f64;
        for i in 1..=1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * (i - 1) as f64 / 999.0;
            prod *= 1.0 - beta;
        }
        assert!((s.alpha_bar(1000) - prod).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.04e-5).abs() < 0.01e-5);
        assert!(s.alpha_bar(1000) > 0.0 && s.alpha_bar(1000) < 0.01);
    }

    #[test]
    fn strictly_decreasing() {
        let s = NoiseSchedule::default();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|&a| a > 0.0 && a <= 1.0));
        assert!(s.check_step(1001).is_err());
    }
}
