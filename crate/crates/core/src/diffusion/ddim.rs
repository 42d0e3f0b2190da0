//! DDIM sampling with noise strength and optional initialization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bundle::ConditioningBundle;
use super::denoiser::EpsModel;
use super::latent::Latent;
use super::schedule::{diffuse_with_alpha, NoiseSchedule};
use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdimConfig {
    pub steps: usize,
    pub eta: f64,
    /// Fraction of the trajectory to re-noise; below 1 needs an init.
    pub strength: f64,
    /// Clamp for the intermediate clean estimate.
    pub clip: Option<f64>,
}

impl Default for DdimConfig {
    fn default() -> Self {
        Self { steps: 50, eta: 0.0, strength: 1.0, clip: None }
    }
}

/// Start step for a strength: `round(strength · T)`.
pub fn start_step(strength: f64, sched: &NoiseSchedule) -> usize {
    (strength * sched.steps() as f64).round() as usize
}

/// Descending visit order `t_start = t_0 > … > t_n = 0`.
pub fn step_grid(t_start: usize, steps: usize) -> Vec<usize> {
    let n = steps.min(t_start).max(1);
    let mut grid: Vec<usize> = (0..=n).map(|k| ((t_start * (n - k)) as f64 / n as f64).round() as usize).collect();
    grid.dedup();
    grid
}

pub fn gaussian<R: Rng>(h: usize, w: usize, c: usize, rng: &mut R) -> Latent {
    Latent { height: h, width: w, channels: c, data: (0..h * w * c).map(|_| StandardNormal.sample(rng)).collect() }
}

/// Samples a latent of `shape`. With `strength < 1` the init is diffused to
/// the start step and denoised from there; `t_start = 0` returns the init.
pub fn ddim_sample<M: EpsModel + ?Sized, R: Rng>(
    model: &M,
    bundle: &ConditioningBundle,
    sched: &NoiseSchedule,
    cfg: &DdimConfig,
    shape: (usize, usize, usize),
    init: Option<&Latent>,
    rng: &mut R,
) -> Result<Latent, DiffusionError> {
    if cfg.steps == 0 || cfg.steps > sched.steps() {
        return Err(DiffusionError::Config(format!("steps must be in 1..={}, got {}", sched.steps(), cfg.steps)));
    }
    if !(0.0..=1.0).contains(&cfg.eta) {
        return Err(DiffusionError::Config(format!("eta {} outside [0, 1]", cfg.eta)));
    }
    if !(cfg.strength > 0.0 && cfg.strength <= 1.0) {
        return Err(DiffusionError::Config(format!("strength {} outside (0, 1]", cfg.strength)));
    }
    if cfg.strength < 1.0 && init.is_none() {
        return Err(DiffusionError::Config("strength below 1 requires an init latent".into()));
    }
    if let Some(x) = init {
        if x.shape() != shape {
            return Err(DiffusionError::Shape(format!("init {:?} vs requested {:?}", x.shape(), shape)));
        }
    }
    let t_start = start_step(cfg.strength, sched);
    if t_start == 0 {
        return Ok(init.expect("checked above").clone());
    }
    let (h, w, c) = shape;
    let noise = gaussian(h, w, c, rng);
    let mut z = match init {
        Some(x) => diffuse_with_alpha(x, &noise, sched.alpha(t_start))?,
        None => noise,
    };
    let grid = step_grid(t_start, cfg.steps);
    for pair in grid.windows(2) {
        let (t, t_next) = (pair[0], pair[1]);
        let (a, a_next) = (sched.alpha(t), sched.alpha(t_next));
        let eps = model.predict_eps(&z, t, sched, bundle)?;
        eps.check_shape(&z)?;
        let sigma = cfg.eta * ((1.0 - a_next) / (1.0 - a)).sqrt() * (1.0 - a / a_next).max(0.0).sqrt();
        let dir = (1.0 - a_next - sigma * sigma).max(0.0).sqrt();
        let fresh = if sigma > 0.0 { Some(gaussian(h, w, c, rng)) } else { None };
        for k in 0..z.data.len() {
            let mut x0 = (z.data[k] - (1.0 - a).sqrt() * eps.data[k]) / a.sqrt();
            if let Some(lim) = cfg.clip {
                x0 = x0.clamp(-lim, lim);
            }
            let mut v = a_next.sqrt() * x0 + dir * eps.data[k];
            if let Some(f) = &fresh {
                v += sigma * f.data[k];
            }
            z.data[k] = v;
        }
        if z.data.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::Diverged { step: t });
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::tests::random_case;
    use crate::diffusion::Mode;
    use rand::SeedableRng;

    /// Returns the exact noise for a known clean latent.
    struct Ideal(Latent);

    impl EpsModel for Ideal {
        fn predict_eps(&self, z: &Latent, t: usize, sched: &NoiseSchedule, _: &ConditioningBundle) -> Result<Latent, DiffusionError> {
            let a = sched.alpha(t);
            let data = z.data.iter().zip(&self.0.data).map(|(z, x)| (z - a.sqrt() * x) / (1.0 - a).sqrt()).collect();
            Ok(Latent { data, ..*z })
        }
    }

    fn toy_x0() -> Latent {
        // linear ramp in [-0.9, 0.9]
        Latent::from_vec(4, 4, 2, (0..32).map(|i| -0.9 + 1.8 * i as f64 / 31.0).collect()).unwrap()
    }

    #[test]
    fn grid_shape() {
        assert_eq!(step_grid(1000, 50).len(), 51);
        assert_eq!(step_grid(1000, 50)[..3], [1000, 980, 960]);
        assert_eq!(step_grid(3, 50), vec![3, 2, 1, 0]);
        assert_eq!(step_grid(1, 50), vec![1, 0]);
    }

    #[test]
    fn ideal_denoiser_recovers_x0() {
        let sched = NoiseSchedule::linear(1000);
        let x0 = toy_x0();
        let (b, _, _) = random_case(Mode::Full, 4, 0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let out = ddim_sample(&Ideal(x0.clone()), &b, &sched, &DdimConfig::default(), x0.shape(), None, &mut rng).unwrap();
        assert!(out.squared_distance(&x0).sqrt() < 1e-3);
    }

    #[test]
    fn smallest_strength_is_near_noop() {
        let sched = NoiseSchedule::linear(1000);
        let x0 = toy_x0();
        let (b, _, _) = random_case(Mode::Full, 4, 0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let cfg = DdimConfig { strength: 1.0 / 1000.0, ..Default::default() };
        let out = ddim_sample(&Ideal(x0.clone()), &b, &sched, &cfg, x0.shape(), Some(&x0), &mut rng).unwrap();
        assert!(out.squared_distance(&x0).sqrt() <= 1e-2);
        let cfg = DdimConfig { strength: 0.0004, ..Default::default() };
        assert!(ddim_sample(&Ideal(x0.clone()), &b, &sched, &cfg, x0.shape(), Some(&x0), &mut rng).unwrap() == x0);
    }

    #[test]
    fn eta_zero_is_deterministic() {
        let sched = NoiseSchedule::linear(100);
        let (b, x0, _) = random_case(Mode::Full, 3, 4);
        let d = crate::diffusion::denoiser::tests::trained_like(crate::diffusion::denoiser::tests::small(Mode::Full), 4);
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            ddim_sample(&d, &b, &sched, &DdimConfig { steps: 10, ..Default::default() }, x0.shape(), None, &mut rng).unwrap()
        };
        let (p, q) = (run(), run());
        assert!(p.data.iter().zip(&q.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let noisy = ddim_sample(&d, &b, &sched, &DdimConfig { steps: 10, eta: 1.0, ..Default::default() }, x0.shape(), None, &mut rng).unwrap();
        assert_ne!(noisy, p);
    }

    #[test]
    fn argument_errors() {
        let sched = NoiseSchedule::linear(100);
        let x0 = toy_x0();
        let (b, _, _) = random_case(Mode::Full, 4, 0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let ideal = Ideal(x0.clone());
        for cfg in [
            DdimConfig { strength: 0.5, ..Default::default() },
            DdimConfig { steps: 0, ..Default::default() },
            DdimConfig { steps: 101, ..Default::default() },
            DdimConfig { eta: 1.5, ..Default::default() },
        ] {
            let cfg = DdimConfig { steps: cfg.steps.min(200), ..cfg };
            assert!(ddim_sample(&ideal, &b, &sched, &cfg, x0.shape(), None, &mut rng).is_err(), "{cfg:?}");
        }
    }
}
