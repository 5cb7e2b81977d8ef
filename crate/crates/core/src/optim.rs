//! Bias-corrected Adam over flat parameter vectors.

use crate::error::{Error, Result};

/// Learning rate used for latent inversion.
pub const DEFAULT_LATENT_LR: f64 = 0.0015;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam settings {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LATENT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments and step counter for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update to `params` in place with the configured rate.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grad, lr)
    }

    pub fn step_with_lr(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len().to_string(),
                actual: format!("params {} / grad {}", params.len(), grad.len()),
            });
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn matches_scalar_reference() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -1.2, 0.05, 2.0, -0.7];
        let mut st = AdamState::new(1, cfg);
        let mut p = [0.25];
        // Scalar reference written out longhand.
        let (mut x, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            st.step(&mut p, &[g]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = (i + 1) as i32;
            x -= 0.0015 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            assert!((p[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut p = vec![0.0; 3];
        st.step(&mut p, &[5.0, -0.01, 1e3]).unwrap();
        for (x, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - s * 0.0015).abs() < 1e-8);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut st = AdamState::new(2, AdamConfig::default());
        assert!(st.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
