//! Isotropic Gaussian-mixture data with its exact noise predictor.
//!
//! Under `z_t = sqrt(ab) x0 + sqrt(1 - ab) eps` and `x0 ~ sum_k w_k N(mu_k, s_k^2 I)`,
//! each component gives `z_t | k ~ N(sqrt(ab) mu_k, v_k I)` with
//! `v_k = ab s_k^2 + 1 - ab`, and a linear posterior mean
//! `m_k = mu_k + sqrt(ab) s_k^2 / v_k (z_t - sqrt(ab) mu_k)`.
//! The optimal predictor is `eps* = (z_t - sqrt(ab) sum_k r_k m_k) / sqrt(1 - ab)`.

use rand::Rng;

use super::checkpoint::{Checkpoint, NamedArray};
use super::schedule::NoiseSchedule;
use super::Denoiser;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::rng;

pub const CHECKPOINT_KIND: &str = "gmm";

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    means: Vec<Image>,
    variances: Vec<f64>,
    weights: Vec<f64>,
}

impl GmmModel {
    pub fn new(means: Vec<Image>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if variances.len() != k || weights.len() != k {
            return Err(Error::invalid(format!(
                "{k} means but {} variances and {} weights",
                variances.len(),
                weights.len()
            )));
        }
        let shape = means[0].shape();
        if means.iter().any(|m| m.shape() != shape) {
            return Err(Error::invalid("all mixture means must share one shape"));
        }
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("component variances must be finite and >= 0"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self {
            means,
            variances,
            weights,
        })
    }

    /// Equal weights and one shared standard deviation.
    pub fn uniform(means: Vec<Image>, std: f64) -> Result<Self> {
        let k = means.len();
        let w = vec![1.0 / k as f64; k];
        // Equal splits of 1 may miss the sum by an ulp; fix the last weight.
        let mut w = w;
        if k > 0 {
            let head: f64 = w[..k - 1].iter().sum();
            w[k - 1] = 1.0 - head;
        }
        Self::new(means, vec![std * std; k], w)
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn shape(&self) -> Shape {
        self.means[0].shape()
    }

    pub fn means(&self) -> &[Image] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample_component(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Image {
        let k = self.sample_component(rng);
        let s = self.variances[k].sqrt();
        let n = rng::normal_image(self.shape(), rng);
        self.means[k].axpby(1.0, &n, s).expect("same shape")
    }

    /// Log responsibilities (unnormalized) of each component for `z_t`.
    fn log_evidence(&self, z_t: &[f64], ab: f64) -> Vec<f64> {
        let sa = ab.sqrt();
        let d = z_t.len() as f64;
        self.means
            .iter()
            .zip(&self.variances)
            .zip(&self.weights)
            .map(|((mu, &var), &w)| {
                let v = ab * var + 1.0 - ab;
                let sq: f64 = z_t
                    .iter()
                    .zip(mu.data())
                    .map(|(z, m)| {
                        let r = z - sa * m;
                        r * r
                    })
                    .sum();
                w.ln() - 0.5 * sq / v - 0.5 * d * v.ln()
            })
            .collect()
    }

    /// Posterior component probabilities, normalized with log-sum-exp.
    pub fn responsibilities(&self, z_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        self.check(z_t, t, sched)?;
        Ok(softmax(&self.log_evidence(z_t.data(), sched.alpha_bar(t))))
    }

    /// `E[x0 | z_t]`.
    pub fn posterior_mean(&self, z_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
        let r = self.responsibilities(z_t, t, sched)?;
        let ab = sched.alpha_bar(t);
        let mut out = vec![0.0; z_t.data().len()];
        for (k, &rk) in r.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            let gain = self.gain(k, ab);
            let sa = ab.sqrt();
            for ((o, &z), &m) in out.iter_mut().zip(z_t.data()).zip(self.means[k].data()) {
                *o += rk * (m + gain * (z - sa * m));
            }
        }
        Image::from_vec(z_t.shape(), out)
    }

    #[inline]
    fn gain(&self, k: usize, ab: f64) -> f64 {
        let var = self.variances[k];
        ab.sqrt() * var / (ab * var + 1.0 - ab)
    }

    fn check(&self, z_t: &Image, t: usize, sched: &NoiseSchedule) -> Result<()> {
        if z_t.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape().to_string(),
                actual: z_t.shape().to_string(),
            });
        }
        if t == 0 || t > sched.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: sched.steps(),
            });
        }
        Ok(())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The exact noise predictor for a [`GmmModel`].
pub fn analytic_gmm_eps(z_t: &Image, t: usize, gmm: &GmmModel, sched: &NoiseSchedule) -> Result<Image> {
    let m = gmm.posterior_mean(z_t, t, sched)?;
    let (sa, sn) = (sched.signal(t), sched.noise(t));
    z_t.zip_map(&m, |z, m| (z - sa * m) / sn)
}

#[derive(Debug, Clone)]
pub struct AnalyticGmmDenoiser {
    gmm: GmmModel,
    schedule: NoiseSchedule,
}

pub struct GmmTape {
    z_t: Image,
    t: usize,
}

impl AnalyticGmmDenoiser {
    pub fn new(gmm: GmmModel, schedule: NoiseSchedule) -> Self {
        Self { gmm, schedule }
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let s = self.gmm.shape();
        let mut arrays = Vec::new();
        let mut means = Vec::with_capacity(self.gmm.components() * s.len());
        for m in &self.gmm.means {
            means.extend_from_slice(m.data());
        }
        arrays.push(NamedArray::new(
            "gmm.means",
            vec![self.gmm.components(), s.height, s.width, s.channels],
            means,
        ));
        arrays.push(NamedArray::new(
            "gmm.variances",
            vec![self.gmm.components()],
            self.gmm.variances.clone(),
        ));
        arrays.push(NamedArray::new(
            "gmm.weights",
            vec![self.gmm.components()],
            self.gmm.weights.clone(),
        ));
        let mut ckpt = Checkpoint::new(&self.schedule, arrays);
        ckpt.set_meta("kind", CHECKPOINT_KIND);
        ckpt
    }

    /// Weights are stored as `f32`, so the reloaded mixture is renormalized.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let means = ckpt.array("gmm.means")?;
        let dims = means.dims();
        if dims.len() != 4 {
            return Err(Error::Format {
                kind: "checkpoint",
                reason: format!("gmm.means must be rank 4, got {dims:?}"),
            });
        }
        let shape = Shape::new(dims[1], dims[2], dims[3]);
        let imgs = means
            .data()
            .chunks_exact(shape.len())
            .map(|c| Image::from_vec(shape, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let variances = ckpt.array("gmm.variances")?.data().to_vec();
        let mut weights = ckpt.array("gmm.weights")?.data().to_vec();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let k = weights.len();
        if k > 0 {
            let head: f64 = weights[..k - 1].iter().sum();
            weights[k - 1] = 1.0 - head;
        }
        Ok(Self::new(GmmModel::new(imgs, variances, weights)?, ckpt.schedule()?))
    }
}

impl Denoiser for AnalyticGmmDenoiser {
    type Tape = GmmTape;

    fn image_shape(&self) -> Shape {
        self.gmm.shape()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn forward(&self, z_t: &Image, t: usize) -> Result<(Image, GmmTape)> {
        let eps = analytic_gmm_eps(z_t, t, &self.gmm, &self.schedule)?;
        Ok((
            eps,
            GmmTape {
                z_t: z_t.clone(),
                t,
            },
        ))
    }

    fn backward(&self, tape: &GmmTape, grad_eps: &Image) -> Result<Image> {
        tape.z_t.ensure_same_shape(grad_eps)?;
        let t = tape.t;
        let ab = self.schedule.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let z = tape.z_t.data();
        let g = grad_eps.data();
        let gmm = &self.gmm;
        let r = softmax(&gmm.log_evidence(z, ab));

        // eps = (z - sa m) / sn  =>  dz += g / sn, dm = -sa / sn g
        let gm_scale = -sa / sn;
        let mut out: Vec<f64> = g.iter().map(|gi| gi / sn).collect();

        // m = sum_k r_k m_k; dm_k/dz = gain_k I; dr_k/dz = r_k (a_k - a_bar),
        // a_k = -(z - sa mu_k) / v_k.
        let mut proj = vec![0.0; r.len()];
        for (k, &rk) in r.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            let gain = gmm.gain(k, ab);
            let mu = gmm.means[k].data();
            let mut dot = 0.0;
            for i in 0..z.len() {
                let mk = mu[i] + gain * (z[i] - sa * mu[i]);
                dot += g[i] * gm_scale * mk;
                out[i] += rk * gain * gm_scale * g[i];
            }
            proj[k] = dot;
        }
        // sum_k (gm . m_k) r_k (a_k - a_bar) = sum_k r_k a_k (p_k - p_bar)
        let p_bar: f64 = r.iter().zip(&proj).map(|(r, p)| r * p).sum();
        for (k, &rk) in r.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            let v = ab * gmm.variances[k] + 1.0 - ab;
            let coef = rk * (proj[k] - p_bar);
            if coef == 0.0 {
                continue;
            }
            let mu = gmm.means[k].data();
            for i in 0..z.len() {
                out[i] -= coef * (z[i] - sa * mu[i]) / v;
            }
        }
        Image::from_vec(tape.z_t.shape(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_gmm(k: usize, shape: Shape, seed: u64) -> GmmModel {
        let mut r = rng::rng(seed);
        let means = (0..k).map(|_| rng::normal_image(shape, &mut r).scale(0.5)).collect();
        let mut w: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.2).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let head: f64 = w[..k - 1].iter().sum();
        w[k - 1] = 1.0 - head;
        let vars = (0..k).map(|_| 0.05 + 0.2 * r.random::<f64>()).collect();
        GmmModel::new(means, vars, w).unwrap()
    }

    /// Posterior mean by direct Bayes summation, no log-sum-exp.
    fn direct_posterior_mean(gmm: &GmmModel, z: &Image, ab: f64) -> Vec<f64> {
        let d = z.data().len() as f64;
        let mut num = vec![0.0; z.data().len()];
        let mut den = 0.0;
        for k in 0..gmm.components() {
            let var = gmm.variances()[k];
            let v = ab * var + 1.0 - ab;
            let mu = gmm.means()[k].data();
            let sq: f64 = z
                .data()
                .iter()
                .zip(mu)
                .map(|(zi, m)| (zi - ab.sqrt() * m).powi(2))
                .sum();
            let lik = gmm.weights()[k] * (2.0 * std::f64::consts::PI * v).powf(-d / 2.0) * (-sq / (2.0 * v)).exp();
            den += lik;
            for i in 0..num.len() {
                let post = mu[i] + ab.sqrt() * var / v * (z.data()[i] - ab.sqrt() * mu[i]);
                num[i] += lik * post;
            }
        }
        num.into_iter().map(|n| n / den).collect()
    }

    #[test]
    fn weights_validated() {
        let m = vec![Image::zeros(Shape::new(2, 2, 1))];
        assert!(GmmModel::new(m.clone(), vec![0.1], vec![0.9]).is_err());
        assert!(GmmModel::new(m.clone(), vec![-0.1], vec![1.0]).is_err());
        assert!(GmmModel::new(m, vec![0.1], vec![1.0]).is_ok());
    }

    #[test]
    fn point_mass_posterior_is_the_mean() {
        let shape = Shape::new(3, 3, 1);
        let mu = Image::from_fn(shape, |y, x, _| (y as f64 - x as f64) * 0.2);
        let gmm = GmmModel::new(vec![mu.clone()], vec![0.0], vec![1.0]).unwrap();
        let sched = NoiseSchedule::default();
        let z = rng::normal_image(shape, &mut rng::rng(4));
        for t in [1, 300, 1000] {
            let eps = analytic_gmm_eps(&z, t, &gmm, &sched).unwrap();
            let expect = z.axpby(1.0, &mu, -sched.signal(t)).unwrap().scale(1.0 / sched.noise(t));
            for (a, b) in eps.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_pair_gives_zero_mean_at_origin() {
        let shape = Shape::new(2, 2, 1);
        let mu = Image::from_fn(shape, |y, x, _| 0.3 + 0.1 * (y + x) as f64);
        let gmm = GmmModel::uniform(vec![mu.clone(), mu.scale(-1.0)], 0.1).unwrap();
        let sched = NoiseSchedule::default();
        let m = gmm.posterior_mean(&Image::zeros(shape), 500, &sched).unwrap();
        assert!(m.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn posterior_mean_matches_direct_summation() {
        let shape = Shape::new(4, 4, 1);
        let gmm = random_gmm(3, shape, 11);
        let sched = NoiseSchedule::default();
        let mut r = rng::rng(12);
        for t in [50, 200, 600, 1000] {
            let x0 = gmm.sample(&mut r);
            let n = rng::normal_image(shape, &mut r);
            let z = x0.axpby(sched.signal(t), &n, sched.noise(t)).unwrap();
            let fast = gmm.posterior_mean(&z, t, &sched).unwrap();
            let slow = direct_posterior_mean(&gmm, &z, sched.alpha_bar(t));
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-8, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn large_t_posterior_tends_to_prior_mean() {
        let shape = Shape::new(4, 4, 1);
        let gmm = random_gmm(3, shape, 5);
        let sched = NoiseSchedule::default();
        let z = rng::normal_image(shape, &mut rng::rng(6));
        let m = gmm.posterior_mean(&z, 1000, &sched).unwrap();
        let mut prior = vec![0.0; shape.len()];
        for k in 0..3 {
            for (p, v) in prior.iter_mut().zip(gmm.means()[k].data()) {
                *p += gmm.weights()[k] * v;
            }
        }
        for (a, b) in m.data().iter().zip(&prior) {
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let shape = Shape::new(4, 4, 1);
        let gmm = random_gmm(3, shape, 21);
        let den = AnalyticGmmDenoiser::new(gmm, NoiseSchedule::default());
        let mut r = rng::rng(22);
        for t in [30, 400, 900] {
            let z = rng::normal_image(shape, &mut r).scale(0.8);
            let w = rng::normal_image(shape, &mut r);
            let (_, tape) = den.forward(&z, t).unwrap();
            let grad = den.backward(&tape, &w).unwrap();
            let h = 1e-5;
            for i in 0..shape.len() {
                let mut zp = z.clone();
                zp.data_mut()[i] += h;
                let mut zm = z.clone();
                zm.data_mut()[i] -= h;
                let fp: f64 = den.eval(&zp, t).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                let fm: f64 = den.eval(&zm, t).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - grad.data()[i]).abs() / fd.abs().max(1e-3);
                assert!(rel <= 1e-6, "t={t} i={i}: fd {fd} vs {}", grad.data()[i]);
            }
        }
    }
}
