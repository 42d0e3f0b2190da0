//! Minibatch training of the toy denoiser.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{ConditioningBundle, Mode};
use super::ddim::gaussian;
use super::denoiser::{Architecture, ToyDenoiser};
use super::latent::{Latent, LatentCodec};
use super::schedule::{diffuse_with_alpha, NoiseSchedule, ScheduleKind};
use super::DiffusionError;
use crate::seed;

/// One training pair: conditions and the clean target latent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub bundle: ConditioningBundle,
    pub target: Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-sample weight on the noise loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    /// Divides out the output scale of the denoiser, so every step trains
    /// its raw output with unit weight. The noise loss alone barely trains
    /// the high-noise steps where the clean estimate is almost entirely
    /// the network output.
    OutputScale,
}

impl Weighting {
    pub fn weight(self, alpha: f64, sigma_data: f64) -> f64 {
        match self {
            Weighting::Uniform => 1.0,
            Weighting::OutputScale => {
                let s = 1.0 - alpha + alpha * sigma_data * sigma_data;
                s / (sigma_data * sigma_data * alpha)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay of the learning rate down to this fraction.
    pub lr_floor: f64,
    pub optimizer: Optimizer,
    pub weighting: Weighting,
    pub seed: u64,
    pub hidden: usize,
    pub dilations: Vec<usize>,
    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
    /// When set, each example cycles through this many pre-drawn `(t, eps)`.
    pub noise_pool: Option<usize>,
    /// Inclusive step range to train on; all of `1..=T` when unset.
    pub t_range: Option<(usize, usize)>,
    /// Stops early (and reports it) once exceeded.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 2e-3,
            lr_floor: 0.1,
            optimizer: Optimizer::adam(),
            weighting: Weighting::OutputScale,
            seed: 0,
            hidden: 32,
            dilations: vec![1, 2, 4],
            schedule: ScheduleKind::Cosine,
            diffusion_steps: 1000,
            noise_pool: None,
            t_range: None,
            time_budget_secs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    /// `(step, mean minibatch loss)` for every step taken.
    pub points: Vec<(usize, f64)>,
    pub stopped_early: bool,
    pub seconds: f64,
}

impl TrainingCurve {
    pub fn first(&self) -> Option<f64> {
        self.points.first().map(|p| p.1)
    }

    /// Mean of the last `k` recorded losses.
    pub fn tail_mean(&self, k: usize) -> Option<f64> {
        let n = self.points.len();
        (n > 0).then(|| {
            let s = &self.points[n.saturating_sub(k)..];
            s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64
        })
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,loss")?;
        for (s, l) in &self.points {
            writeln!(f, "{s},{l}")?;
        }
        f.flush()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub denoiser: ToyDenoiser,
    pub schedule: NoiseSchedule,
    pub curve: TrainingCurve,
}

fn draw<R: Rng>(shape: (usize, usize, usize), sched: &NoiseSchedule, range: Option<(usize, usize)>, rng: &mut R) -> (usize, Latent) {
    let (lo, hi) = range.unwrap_or((1, sched.steps()));
    let t = rng.random_range(lo.max(1)..=hi.min(sched.steps()).max(lo.max(1)));
    (t, gaussian(shape.0, shape.1, shape.2, rng))
}

/// Trains a fresh denoiser for `mode` on `examples`.
pub fn train_toy(examples: &[TrainExample], mode: Mode, codec: &dyn LatentCodec, cfg: &TrainConfig) -> Result<TrainedModel, DiffusionError> {
    let arch = Architecture::new(mode, codec, cfg.hidden, cfg.dilations.clone());
    let denoiser = ToyDenoiser::new(arch, seed::substream(cfg.seed, "init"))?;
    let schedule = NoiseSchedule::new(cfg.schedule, cfg.diffusion_steps)?;
    train_from(denoiser, schedule, examples, cfg)
}

/// Continues training an existing denoiser.
pub fn train_from(mut denoiser: ToyDenoiser, schedule: NoiseSchedule, examples: &[TrainExample], cfg: &TrainConfig) -> Result<TrainedModel, DiffusionError> {
    if examples.is_empty() {
        return Err(DiffusionError::Config("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(DiffusionError::Config("batch size must be positive".into()));
    }
    let arch = denoiser.arch().clone();
    for ex in examples {
        ex.bundle.validate(arch.mode, arch.latent_channels, arch.mask_channels, arch.text_width)?;
        if ex.target.shape() != ex.bundle.masked_visible.shape() {
            return Err(DiffusionError::Shape(format!("target {:?} vs bundle {:?}", ex.target.shape(), ex.bundle.masked_visible.shape())));
        }
        if ex.target.height > 64 || ex.target.width > 64 {
            return Err(DiffusionError::Config("toy training is limited to grids of at most 64".into()));
        }
    }
    let pool: Option<Vec<Vec<(usize, Latent)>>> = cfg.noise_pool.map(|k| {
        examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut rng = seed::rng_indexed(cfg.seed, "noise_pool", i as u64);
                (0..k.max(1)).map(|_| draw(ex.target.shape(), &schedule, cfg.t_range, &mut rng)).collect()
            })
            .collect()
    });

    let n_params = denoiser.params().len();
    let (mut m1, mut m2) = (vec![0.0; n_params], vec![0.0; n_params]);
    let mut points = Vec::with_capacity(cfg.steps);
    let start = Instant::now();
    let mut stopped_early = false;
    for step in 0..cfg.steps {
        if cfg.time_budget_secs.is_some_and(|b| start.elapsed().as_secs_f64() > b) {
            stopped_early = true;
            break;
        }
        let mut rng = seed::rng_indexed(cfg.seed, "train_step", step as u64);
        let jobs: Vec<(usize, usize, Latent)> = (0..cfg.batch_size)
            .map(|_| {
                let i = rng.random_range(0..examples.len());
                match &pool {
                    Some(p) => {
                        let (t, eps) = &p[i][rng.random_range(0..p[i].len())];
                        (i, *t, eps.clone())
                    }
                    None => {
                        let (t, eps) = draw(examples[i].target.shape(), &schedule, cfg.t_range, &mut rng);
                        (i, t, eps)
                    }
                }
            })
            .collect();
        let results: Vec<Result<(f64, Vec<f64>, f64), DiffusionError>> = jobs
            .par_iter()
            .map(|(i, t, eps)| {
                let ex = &examples[*i];
                let a = schedule.alpha(*t);
                let z = diffuse_with_alpha(&ex.target, eps, a)?;
                let (l, g) = denoiser.loss_grad_at(&z, a, eps, &ex.bundle)?;
                Ok((l, g, cfg.weighting.weight(a, arch.sigma_data)))
            })
            .collect();
        // fixed-order reduction
        let mut loss = 0.0;
        let mut g = vec![0.0; n_params];
        for r in results {
            let (l, gi, w) = r?;
            loss += l;
            g.iter_mut().zip(&gi).for_each(|(a, b)| *a += w * b);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        loss *= inv;
        if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::Diverged { step });
        }
        points.push((step, loss));
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let p = denoiser.params_mut();
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, gi) in p.iter_mut().zip(&g) {
                    *w -= lr * gi * inv;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let k = (step + 1) as i32;
                let (c1, c2) = (1.0 - beta1.powi(k), 1.0 - beta2.powi(k));
                for j in 0..n_params {
                    let gj = g[j] * inv;
                    m1[j] = beta1 * m1[j] + (1.0 - beta1) * gj;
                    m2[j] = beta2 * m2[j] + (1.0 - beta2) * gj * gj;
                    p[j] -= lr * (m1[j] / c1) / ((m2[j] / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(TrainedModel { denoiser, schedule, curve: TrainingCurve { points, stopped_early, seconds: start.elapsed().as_secs_f64() } })
}

/// Mean loss over `draws` fixed `(t, eps)` per example, seeded by `seed`.
pub fn evaluation_loss(denoiser: &ToyDenoiser, schedule: &NoiseSchedule, examples: &[TrainExample], draws: usize, seed: u64) -> Result<f64, DiffusionError> {
    let losses: Vec<Result<f64, DiffusionError>> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = seed::rng_indexed(seed, "eval_loss", i as u64);
            let mut s = 0.0;
            for _ in 0..draws {
                let (t, eps) = draw(ex.target.shape(), schedule, None, &mut rng);
                let a = schedule.alpha(t);
                let z = diffuse_with_alpha(&ex.target, &eps, a)?;
                s += denoiser.eps_at(&z, a, &ex.bundle)?.squared_distance(&eps) / eps.data.len() as f64;
            }
            Ok(s / draws as f64)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::tests::random_case;
    use crate::diffusion::BlockCodec;

    #[test]
    fn memorizes_one_sample() {
        let (bundle, target, _) = random_case(Mode::Full, 3, 1);
        let ex = [TrainExample { bundle, target }];
        let cfg = TrainConfig {
            steps: 1500,
            batch_size: 1,
            lr: 0.2,
            lr_floor: 1.0,
            optimizer: Optimizer::Sgd,
            weighting: Weighting::Uniform,
            hidden: 16,
            dilations: vec![1],
            diffusion_steps: 100,
            noise_pool: Some(1),
            t_range: Some((50, 50)),
            ..Default::default()
        };
        let out = train_toy(&ex, Mode::Full, &BlockCodec::default(), &cfg).unwrap();
        let l: Vec<f64> = out.curve.points.iter().map(|p| p.1).collect();
        assert!(l.windows(2).all(|w| w[1] <= w[0]), "not monotone");
        assert!(l[l.len() - 1] < 0.05 * l[0], "{} -> {}", l[0], l[l.len() - 1]);
    }

    #[test]
    fn deterministic_and_rejects_mismatch() {
        let (bundle, target, _) = random_case(Mode::Partial, 3, 2);
        let ex = vec![TrainExample { bundle, target }];
        let cfg = TrainConfig { steps: 5, batch_size: 3, hidden: 4, dilations: vec![1], diffusion_steps: 50, ..Default::default() };
        let a = train_toy(&ex, Mode::Partial, &BlockCodec::default(), &cfg).unwrap();
        let b = train_toy(&ex, Mode::Partial, &BlockCodec::default(), &cfg).unwrap();
        assert_eq!(a.denoiser, b.denoiser);
        assert_eq!(a.curve.points, b.curve.points);
        assert!(train_toy(&ex, Mode::Full, &BlockCodec::default(), &cfg).is_err());
        assert!(train_toy(&[], Mode::Full, &BlockCodec::default(), &cfg).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let (bundle, target, _) = random_case(Mode::Full, 3, 3);
        let ex = [TrainExample { bundle, target }];
        let cfg = TrainConfig { steps: 50, batch_size: 1, lr: 1e200, lr_floor: 1.0, optimizer: Optimizer::Sgd, hidden: 4, dilations: vec![1], diffusion_steps: 50, ..Default::default() };
        match train_toy(&ex, Mode::Full, &BlockCodec::default(), &cfg) {
            Err(DiffusionError::Diverged { step }) => assert!(step >= 1 && step < 50),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn curve_csv() {
        let c = TrainingCurve { points: vec![(0, 1.5), (1, 0.5)], stopped_early: false, seconds: 0.0 };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        c.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "step,loss\n0,1.5\n1,0.5\n");
        assert_eq!(c.tail_mean(5), Some(1.0));
    }
}
