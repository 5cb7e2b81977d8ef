//! Deterministic (eta = 0) DDIM with a coarse, uniform stride, and its exact
//! reverse-mode derivative with respect to the initial latent.

use super::schedule::NoiseSchedule;
use super::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;

/// Stride used by the restoration sampler (10 steps over T = 1000).
pub const DEFAULT_STRIDE: usize = 100;

/// `sqrt(ab_t) x0 + sqrt(1 - ab_t) noise`.
pub fn forward_diffuse(x0: &Image, t: usize, noise: &Image, sched: &NoiseSchedule) -> Result<Image> {
    sched.check_step(t)?;
    x0.axpby(sched.signal(t), noise, sched.noise(t))
}

/// `(z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)`.
pub fn x0_hat_from(z_t: &Image, eps_pred: &Image, t: usize, sched: &NoiseSchedule) -> Result<Image> {
    check_positive_step(t, sched)?;
    let (sa, sn) = (sched.signal(t), sched.noise(t));
    z_t.zip_map(eps_pred, |z, e| (z - sn * e) / sa)
}

/// One DDIM update from `t` to `t - dt`:
/// `sqrt(ab') x0 + sqrt(1 - ab') (z_t - sqrt(ab) x0) / sqrt(1 - ab)`.
pub fn ddim_step(z_t: &Image, x0_hat: &Image, t: usize, dt: usize, sched: &NoiseSchedule) -> Result<Image> {
    check_positive_step(t, sched)?;
    if dt == 0 || dt > t {
        return Err(Error::invalid(format!("DDIM step from t={t} by dt={dt} leaves the schedule")));
    }
    let c = StepCoeffs::new(sched, t, dt);
    z_t.zip_map(x0_hat, |z, x| c.next_signal * x + c.next_noise * (z - c.signal * x) / c.noise)
}

fn check_positive_step(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t == 0 || t > sched.steps() {
        return Err(Error::StepOutOfRange {
            t,
            max: sched.steps(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct StepCoeffs {
    signal: f64,
    noise: f64,
    next_signal: f64,
    next_noise: f64,
}

impl StepCoeffs {
    fn new(sched: &NoiseSchedule, t: usize, dt: usize) -> Self {
        Self {
            signal: sched.signal(t),
            noise: sched.noise(t),
            next_signal: sched.signal(t - dt),
            next_noise: sched.noise(t - dt),
        }
    }
}

/// The mapping `g(z)`: DDIM from `t = T` down to 0 with stride `dt`.
pub struct DdimSampler<'a, D: Denoiser> {
    denoiser: &'a D,
    stride: usize,
}

/// Forward activations of one `g(z)` evaluation.
pub struct SamplerTape<T> {
    steps: Vec<(usize, T)>,
}

impl<'a, D: Denoiser> DdimSampler<'a, D> {
    pub fn new(denoiser: &'a D, stride: usize) -> Result<Self> {
        let steps = denoiser.schedule().steps();
        if stride == 0 || steps % stride != 0 {
            return Err(Error::invalid(format!(
                "sampler stride {stride} must divide the schedule length {steps}"
            )));
        }
        Ok(Self { denoiser, stride })
    }

    pub fn denoiser(&self) -> &D {
        self.denoiser
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Visited timesteps, from `T` down to `stride`.
    pub fn timesteps(&self) -> impl Iterator<Item = usize> + use<'a, D> {
        let (t_max, stride) = (self.denoiser.schedule().steps(), self.stride);
        (1..=t_max / stride).rev().map(move |i| i * stride)
    }

    pub fn generate(&self, z: &Image) -> Result<Image> {
        self.run(z, false).map(|(x, _)| x)
    }

    pub fn generate_with_tape(&self, z: &Image) -> Result<(Image, SamplerTape<D::Tape>)> {
        self.run(z, true)
    }

    fn run(&self, z: &Image, keep: bool) -> Result<(Image, SamplerTape<D::Tape>)> {
        let sched = self.denoiser.schedule();
        let shape = self.denoiser.image_shape();
        if z.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                actual: z.shape().to_string(),
            });
        }
        let mut z_t = z.clone();
        let mut x0 = Image::zeros(shape);
        let mut steps = Vec::new();
        for t in self.timesteps() {
            let (eps, tape) = self.denoiser.forward(&z_t, t)?;
            x0 = x0_hat_from(&z_t, &eps, t, sched)?;
            z_t = ddim_step(&z_t, &x0, t, self.stride, sched)?;
            if keep {
                steps.push((t, tape));
            }
        }
        Ok((x0, SamplerTape { steps }))
    }

    /// Vector-Jacobian product: gradient on `z` given the gradient on `g(z)`.
    pub fn backward(&self, tape: &SamplerTape<D::Tape>, grad_x0: &Image) -> Result<Image> {
        let sched = self.denoiser.schedule();
        let mut steps = tape.steps.iter().rev();
        // The last step's x0 is the output; its z_{t-dt} is never used.
        let Some((t_last, last)) = steps.next() else {
            return Ok(grad_x0.clone());
        };
        let mut g_z = self.back_through_x0(*t_last, last, grad_x0, None, sched)?;
        for (t, step_tape) in steps {
            // z' = (a - b c) x0 + b z_t with a, b, c the step coefficients.
            let k = StepCoeffs::new(sched, *t, self.stride);
            let b = k.next_noise / k.noise;
            let g_x0 = g_z.scale(k.next_signal - b * k.signal);
            let direct = g_z.scale(b);
            g_z = self.back_through_x0(*t, step_tape, &g_x0, Some(direct), sched)?;
        }
        Ok(g_z)
    }

    fn back_through_x0(
        &self,
        t: usize,
        tape: &D::Tape,
        g_x0: &Image,
        direct: Option<Image>,
        sched: &NoiseSchedule,
    ) -> Result<Image> {
        // x0 = (z_t - sn eps(z_t)) / sa
        let (sa, sn) = (sched.signal(t), sched.noise(t));
        let g_eps = g_x0.scale(-sn / sa);
        let via_eps = self.denoiser.backward(tape, &g_eps)?;
        let mut g = g_x0.scale(1.0 / sa).axpby(1.0, &via_eps, 1.0)?;
        if let Some(d) = direct {
            g = g.axpby(1.0, &d, 1.0)?;
        }
        Ok(g)
    }
}

pub fn ddim_generate<D: Denoiser>(z: &Image, denoiser: &D, stride: usize) -> Result<Image> {
    DdimSampler::new(denoiser, stride)?.generate(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::gmm::{AnalyticGmmDenoiser, GmmModel};
    use crate::image::Shape;
    use crate::rng;

    fn toy() -> AnalyticGmmDenoiser {
        let shape = Shape::new(4, 4, 1);
        let mut r = rng::rng(3);
        let means = (0..3).map(|_| rng::normal_image(shape, &mut r).scale(0.4)).collect();
        AnalyticGmmDenoiser::new(GmmModel::uniform(means, 0.2).unwrap(), NoiseSchedule::default())
    }

    #[test]
    fn forward_diffuse_edges() {
        let s = NoiseSchedule::default();
        let x = Image::filled(Shape::new(2, 2, 1), 0.7);
        let n = Image::filled(Shape::new(2, 2, 1), -0.3);
        assert_eq!(forward_diffuse(&x, 0, &n, &s).unwrap(), x);
        let z = forward_diffuse(&x, 10, &Image::zeros(x.shape()), &s).unwrap();
        assert!(z.data().iter().all(|&v| v == s.signal(10) * 0.7));
        assert!(forward_diffuse(&x, 1001, &n, &s).is_err());
    }

    #[test]
    fn x0_round_trip_and_zero_eps() {
        let s = NoiseSchedule::default();
        let mut r = rng::rng(1);
        let x = rng::normal_image(Shape::new(3, 3, 3), &mut r);
        let n = rng::normal_image(Shape::new(3, 3, 3), &mut r);
        for t in [1, 250, 1000] {
            let z = forward_diffuse(&x, t, &n, &s).unwrap();
            let back = x0_hat_from(&z, &n, t, &s).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            let plain = x0_hat_from(&z, &Image::zeros(z.shape()), t, &s).unwrap();
            assert_eq!(plain, z.map(|v| v / s.signal(t)));
        }
        assert!(x0_hat_from(&x, &n, 0, &s).is_err());
    }

    #[test]
    fn ddim_step_preserves_direction() {
        let s = NoiseSchedule::default();
        let mut r = rng::rng(2);
        let x = rng::normal_image(Shape::new(3, 3, 1), &mut r);
        let n = rng::normal_image(Shape::new(3, 3, 1), &mut r);
        let z = forward_diffuse(&x, 700, &n, &s).unwrap();
        let next = ddim_step(&z, &x, 700, 100, &s).unwrap();
        let expect = forward_diffuse(&x, 600, &n, &s).unwrap();
        for (a, b) in next.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(ddim_step(&z, &x, 700, 700, &s).unwrap(), x);
        assert!(ddim_step(&z, &x, 700, 800, &s).is_err());
    }

    #[test]
    fn stride_must_divide_schedule() {
        let d = toy();
        assert!(DdimSampler::new(&d, 300).is_err());
        assert!(DdimSampler::new(&d, 0).is_err());
        let s = DdimSampler::new(&d, 100).unwrap();
        assert_eq!(s.timesteps().collect::<Vec<_>>(), (1..=10).rev().map(|i| i * 100).collect::<Vec<_>>());
    }

    #[test]
    fn single_step_collapse() {
        let d = toy();
        let z = rng::normal_image(d.image_shape(), &mut rng::rng(9));
        let g = ddim_generate(&z, &d, 1000).unwrap();
        let eps = d.eval(&z, 1000).unwrap();
        assert_eq!(g, x0_hat_from(&z, &eps, 1000, d.schedule()).unwrap());
    }

    #[test]
    fn sampler_vjp_matches_finite_differences() {
        let d = toy();
        let sampler = DdimSampler::new(&d, 100).unwrap();
        let mut r = rng::rng(10);
        let z = rng::normal_image(d.image_shape(), &mut r);
        let w = rng::normal_image(d.image_shape(), &mut r);
        let (_, tape) = sampler.generate_with_tape(&z).unwrap();
        let grad = sampler.backward(&tape, &w).unwrap();
        let f = |zz: &Image| -> f64 {
            sampler.generate(zz).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for i in 0..z.data().len() {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            let mut zm = z.clone();
            zm.data_mut()[i] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            let rel = (fd - grad.data()[i]).abs() / fd.abs().max(1e-4);
            assert!(rel < 1e-5, "coord {i}: fd {fd} vs {}", grad.data()[i]);
        }
    }
}
