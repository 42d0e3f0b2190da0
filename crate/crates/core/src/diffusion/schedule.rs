//! Cumulative noise schedules and the forward process.

use serde::{Deserialize, Serialize};

use super::latent::Latent;
use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// `alpha[t]` is the cumulative signal fraction at step `t`; `alpha[0] = 1`.
/// Serialized as its kind and step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ScheduleSpec", try_from = "ScheduleSpec")]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    alpha: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ScheduleSpec {
    kind: ScheduleKind,
    steps: usize,
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        Self { kind: s.kind, steps: s.steps() }
    }
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = DiffusionError;

    fn try_from(s: ScheduleSpec) -> Result<Self, Self::Error> {
        NoiseSchedule::new(s.kind, s.steps)
    }
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self, DiffusionError> {
        if steps < 2 {
            return Err(DiffusionError::Config(format!("schedule needs at least 2 steps, got {steps}")));
        }
        let betas: Vec<f64> = match kind {
            // the usual 1e-4..0.02 ramp, rescaled so the endpoint matches T = 1000
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (scale * 1e-4, (scale * 0.02).min(0.999));
                (1..=steps).map(|t| lo + (hi - lo) * (t - 1) as f64 / (steps - 1) as f64).collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let u = (t as f64 / steps as f64 + 0.008) / 1.008;
                    (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, 0.999)).collect()
            }
        };
        let mut alpha = Vec::with_capacity(steps + 1);
        alpha.push(1.0);
        for b in betas {
            let prev = *alpha.last().unwrap();
            alpha.push(prev * (1.0 - b));
        }
        Ok(Self { kind, alpha })
    }

    pub fn linear(steps: usize) -> Self {
        Self::new(ScheduleKind::Linear, steps).expect("valid step count")
    }

    pub fn cosine(steps: usize) -> Self {
        Self::new(ScheduleKind::Cosine, steps).expect("valid step count")
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }
}

/// `√α·x0 + √(1−α)·eps` for a raw cumulative α.
pub fn diffuse_with_alpha(x0: &Latent, eps: &Latent, a: f64) -> Result<Latent, DiffusionError> {
    x0.check_shape(eps)?;
    let (s, n) = (a.sqrt(), (1.0 - a).sqrt());
    let data = x0.data.iter().zip(&eps.data).map(|(x, e)| s * x + n * e).collect();
    Ok(Latent { data, ..*x0 })
}

pub fn forward_diffuse(x0: &Latent, t: usize, eps: &Latent, sched: &NoiseSchedule) -> Result<Latent, DiffusionError> {
    if t > sched.steps() {
        return Err(DiffusionError::Config(format!("step {t} outside 0..={}", sched.steps())));
    }
    diffuse_with_alpha(x0, eps, sched.alpha(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_monotone_with_endpoints() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            for steps in [10, 100, 1000] {
                let s = NoiseSchedule::new(kind, steps).unwrap();
                let a = s.alphas();
                assert_eq!(a.len(), steps + 1);
                assert!(a[0] >= 1.0 - 1e-4);
                assert!(a[steps] <= 1e-3 && a[steps] > 0.0, "{kind:?} {steps}: {}", a[steps]);
                assert!(a.windows(2).all(|w| w[1] < w[0]), "{kind:?} {steps}");
            }
        }
    }

    #[test]
    fn forward_closed_forms() {
        let x0 = Latent::from_vec(1, 1, 1, vec![2.0]).unwrap();
        let e = Latent::from_vec(1, 1, 1, vec![1.0]).unwrap();
        assert_eq!(diffuse_with_alpha(&x0, &e, 1.0).unwrap(), x0);
        assert_eq!(diffuse_with_alpha(&x0, &e, 0.0).unwrap(), e);
        let z = diffuse_with_alpha(&x0, &e, 0.25).unwrap().data[0];
        assert!((z - (0.5 * 2.0 + 0.75f64.sqrt())).abs() < 1e-15);
        assert!((z - 1.8660).abs() < 1e-4);
        let s = NoiseSchedule::linear(100);
        assert_eq!(forward_diffuse(&x0, 0, &e, &s).unwrap(), x0);
        assert!(forward_diffuse(&x0, 101, &e, &s).is_err());
    }
}
