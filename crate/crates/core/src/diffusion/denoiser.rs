//! The toy noise-prediction network and its exact gradients.
//!
//! Architecture, on the latent grid (all convolutions zero-padded, "same"):
//!
//! ```text
//! input (input_width channels, layout in `bundle`)
//!   -> conv 3×3, dilation d_1, hidden channels -> tanh
//!   -> conv 3×3, dilation d_k, hidden channels -> tanh    (one per entry of `dilations`)
//!   -> conv 1×1 to C channels = F
//! eps_hat = z·√(1−α)/s − σ_d·√α/√s · F,     s = 1 − α + α·σ_d²
//! ```
//!
//! The output parametrization keeps `F`'s target at unit scale for every
//! step and stays finite at α = 1.
//!
//! Flat parameter layout: for each conv layer `W[k][in][out]` (k = ky·3+kx)
//! followed by its bias `[out]`; then the 1×1 head `W[hidden][C]` and bias
//! `[C]`. The zero block is `W_1[k][i][·]` for every tap `k` and every input
//! channel `i ≥ base_width()`.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bundle::{ConditioningBundle, Mode, TEXT_WIDTH};
use super::latent::{Latent, LatentCodec};
use super::schedule::{forward_diffuse, NoiseSchedule};
use super::DiffusionError;

pub const MAX_PARAMS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub mode: Mode,
    pub latent_channels: usize,
    /// Channels of one encoded mask; partial mode carries three.
    pub mask_channels: usize,
    pub text_width: usize,
    pub hidden: usize,
    pub dilations: Vec<usize>,
    pub sigma_data: f64,
}

impl Architecture {
    pub fn new(mode: Mode, codec: &dyn LatentCodec, hidden: usize, dilations: Vec<usize>) -> Self {
        Self { mode, latent_channels: codec.latent_channels(), mask_channels: codec.mask_channels(), text_width: TEXT_WIDTH, hidden, dilations, sigma_data: 0.5 }
    }

    pub fn base_width(&self) -> usize {
        2 * self.latent_channels + 3 + self.text_width
    }

    pub fn extra_width(&self) -> usize {
        self.latent_channels + if self.mode == Mode::Partial { 3 * self.mask_channels } else { 0 }
    }

    pub fn input_width(&self) -> usize {
        self.base_width() + self.extra_width()
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_width()
        } else {
            self.hidden
        }
    }

    /// Offsets of each conv layer's weights; the head follows the last one.
    fn offsets(&self) -> (Vec<usize>, usize) {
        let mut offs = Vec::with_capacity(self.dilations.len());
        let mut o = 0;
        for l in 0..self.dilations.len() {
            offs.push(o);
            o += 9 * self.layer_in(l) * self.hidden + self.hidden;
        }
        (offs, o)
    }

    pub fn param_count(&self) -> usize {
        let (_, head) = self.offsets();
        head + self.hidden * self.latent_channels + self.latent_channels
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.dilations.is_empty() || self.dilations.contains(&0) || self.hidden == 0 {
            return Err(DiffusionError::Config("need at least one conv layer with dilation >= 1 and hidden >= 1".into()));
        }
        if self.param_count() > MAX_PARAMS {
            return Err(DiffusionError::Config(format!("{} parameters exceeds {MAX_PARAMS}", self.param_count())));
        }
        Ok(())
    }

    /// Indices of the zero-initialized input rows.
    pub fn zero_block(&self) -> Vec<usize> {
        let (inw, h, base) = (self.input_width(), self.hidden, self.base_width());
        (0..9).flat_map(|k| (base * h..inw * h).map(move |j| k * inw * h + j)).collect()
    }
}

/// Anything that predicts the noise in `z` at step `t`.
pub trait EpsModel: Sync {
    fn predict_eps(&self, z: &Latent, t: usize, sched: &NoiseSchedule, bundle: &ConditioningBundle) -> Result<Latent, DiffusionError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    arch: Architecture,
    params: Vec<f64>,
}

struct Trace {
    input: Vec<f64>,
    /// Post-tanh activations, one per conv layer.
    acts: Vec<Vec<f64>>,
    eps_hat: Vec<f64>,
    c_f: f64,
}

impl ToyDenoiser {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, DiffusionError> {
        arch.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.param_count()];
        let (offs, head) = arch.offsets();
        let h = arch.hidden;
        for (l, &o) in offs.iter().enumerate() {
            let cin = arch.layer_in(l);
            let std = (1.0 / (9 * cin) as f64).sqrt() * if l == 0 { 1.5 } else { 1.0 };
            for v in &mut params[o..o + 9 * cin * h] {
                *v = std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
        }
        let std = (1.0 / h as f64).sqrt();
        for v in &mut params[head..head + h * arch.latent_channels] {
            *v = std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        }
        for i in arch.zero_block() {
            params[i] = 0.0;
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, DiffusionError> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(DiffusionError::Shape(format!("{} parameters, architecture needs {}", params.len(), arch.param_count())));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check(&self, z: &Latent, bundle: &ConditioningBundle) -> Result<(), DiffusionError> {
        let a = &self.arch;
        bundle.validate(a.mode, a.latent_channels, a.mask_channels, a.text_width)?;
        if z.shape() != bundle.masked_visible.shape() {
            return Err(DiffusionError::Shape(format!("latent {:?} vs bundle {:?}", z.shape(), bundle.masked_visible.shape())));
        }
        Ok(())
    }

    fn build_input(&self, z: &Latent, alpha: f64, bundle: &ConditioningBundle) -> Vec<f64> {
        let sd2 = self.arch.sigma_data * self.arch.sigma_data;
        let inv_s = 1.0 / (1.0 - alpha + alpha * sd2).sqrt();
        let time = [alpha.sqrt(), (1.0 - alpha).sqrt()];
        let mut input = Vec::with_capacity(z.cells() * self.arch.input_width());
        for i in 0..z.cells() {
            input.extend(z.cell(i).iter().map(|v| v * inv_s));
            input.extend_from_slice(bundle.masked_visible.cell(i));
            input.extend_from_slice(bundle.inpaint_mask.cell(i));
            input.extend_from_slice(&time);
            input.extend_from_slice(&bundle.text);
            input.extend_from_slice(bundle.extra_images.cell(i));
            if let Some(m) = &bundle.extra_masks {
                input.extend_from_slice(m.cell(i));
            }
        }
        input
    }

    fn forward(&self, z: &Latent, alpha: f64, bundle: &ConditioningBundle) -> Trace {
        let a = &self.arch;
        let (gh, gw) = (z.height, z.width);
        let cells = gh * gw;
        let h = a.hidden;
        let input = self.build_input(z, alpha, bundle);
        let (offs, head) = a.offsets();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(offs.len());
        for (l, &o) in offs.iter().enumerate() {
            let cin = a.layer_in(l);
            let src = if l == 0 { &input } else { &acts[l - 1] };
            let w = &self.params[o..o + 9 * cin * h];
            let b = &self.params[o + 9 * cin * h..o + 9 * cin * h + h];
            let mut out = vec![0.0; cells * h];
            conv3_forward(src, cin, gh, gw, w, b, h, a.dilations[l], &mut out);
            out.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(out);
        }
        let c = a.latent_channels;
        let wo = &self.params[head..head + h * c];
        let bo = &self.params[head + h * c..head + h * c + c];
        let last = acts.last().unwrap();
        let sd = a.sigma_data;
        let s = 1.0 - alpha + alpha * sd * sd;
        let c_z = (1.0 - alpha).sqrt() / s;
        let c_f = sd * alpha.sqrt() / s.sqrt();
        let mut eps_hat = vec![0.0; cells * c];
        for cell in 0..cells {
            let out = &mut eps_hat[cell * c..(cell + 1) * c];
            out.copy_from_slice(bo);
            let act = &last[cell * h..(cell + 1) * h];
            for (j, &v) in act.iter().enumerate() {
                axpy(v, &wo[j * c..(j + 1) * c], out);
            }
            let zc = z.cell(cell);
            for k in 0..c {
                out[k] = c_z * zc[k] - c_f * out[k];
            }
        }
        Trace { input, acts, eps_hat, c_f }
    }

    /// Noise prediction at cumulative signal level `alpha`.
    pub fn eps_at(&self, z: &Latent, alpha: f64, bundle: &ConditioningBundle) -> Result<Latent, DiffusionError> {
        self.check(z, bundle)?;
        let tr = self.forward(z, alpha, bundle);
        Ok(Latent { data: tr.eps_hat, ..*z })
    }

    /// Mean squared error against `eps` and its exact parameter gradient.
    pub fn loss_grad_at(&self, z: &Latent, alpha: f64, eps: &Latent, bundle: &ConditioningBundle) -> Result<(f64, Vec<f64>), DiffusionError> {
        self.check(z, bundle)?;
        z.check_shape(eps)?;
        let tr = self.forward(z, alpha, bundle);
        let a = &self.arch;
        let (gh, gw) = (z.height, z.width);
        let cells = gh * gw;
        let (h, c) = (a.hidden, a.latent_channels);
        let n = tr.eps_hat.len() as f64;
        let mut loss = 0.0;
        // dL/dF
        let mut d_out = vec![0.0; cells * c];
        for (k, (p, e)) in tr.eps_hat.iter().zip(&eps.data).enumerate() {
            let r = p - e;
            loss += r * r;
            d_out[k] = -2.0 * r / n * tr.c_f;
        }
        loss /= n;

        let mut g = vec![0.0; self.params.len()];
        let (offs, head) = a.offsets();
        let wo = &self.params[head..head + h * c];
        let last = tr.acts.last().unwrap();
        let mut d_act = vec![0.0; cells * h];
        {
            let (gw_o, gb_o) = g[head..].split_at_mut(h * c);
            for cell in 0..cells {
                let d = &d_out[cell * c..(cell + 1) * c];
                for k in 0..c {
                    gb_o[k] += d[k];
                }
                let act = &last[cell * h..(cell + 1) * h];
                let da = &mut d_act[cell * h..(cell + 1) * h];
                for j in 0..h {
                    axpy(act[j], d, &mut gw_o[j * c..(j + 1) * c]);
                    da[j] = dot(&wo[j * c..(j + 1) * c], d);
                }
            }
        }
        for l in (0..offs.len()).rev() {
            let cin = a.layer_in(l);
            let o = offs[l];
            // through tanh
            let act = &tr.acts[l];
            for (d, y) in d_act.iter_mut().zip(act) {
                *d *= 1.0 - y * y;
            }
            let src = if l == 0 { &tr.input } else { &tr.acts[l - 1] };
            let w = &self.params[o..o + 9 * cin * h];
            let (gw_l, rest) = g[o..].split_at_mut(9 * cin * h);
            let gb_l = &mut rest[..h];
            let mut d_src = if l > 0 { Some(vec![0.0; cells * cin]) } else { None };
            conv3_backward(src, cin, gh, gw, w, h, a.dilations[l], &d_act, gw_l, gb_l, d_src.as_deref_mut());
            if let Some(ds) = d_src {
                d_act = ds;
            }
        }
        Ok((loss, g))
    }
}

impl EpsModel for ToyDenoiser {
    fn predict_eps(&self, z: &Latent, t: usize, sched: &NoiseSchedule, bundle: &ConditioningBundle) -> Result<Latent, DiffusionError> {
        self.eps_at(z, sched.alpha(t), bundle)
    }
}

#[inline]
fn axpy(v: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += v * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Source cell for tap `k` at `(y, x)`, if inside the grid.
#[inline]
fn tap(y: usize, x: usize, k: usize, dil: usize, gh: usize, gw: usize) -> Option<usize> {
    let sy = y as isize + (k / 3) as isize * dil as isize - dil as isize;
    let sx = x as isize + (k % 3) as isize * dil as isize - dil as isize;
    (sy >= 0 && sx >= 0 && (sy as usize) < gh && (sx as usize) < gw).then(|| sy as usize * gw + sx as usize)
}

#[allow(clippy::too_many_arguments)]
fn conv3_forward(src: &[f64], cin: usize, gh: usize, gw: usize, w: &[f64], b: &[f64], h: usize, dil: usize, out: &mut [f64]) {
    for y in 0..gh {
        for x in 0..gw {
            let o = &mut out[(y * gw + x) * h..(y * gw + x + 1) * h];
            o.copy_from_slice(b);
            for k in 0..9 {
                let Some(sc) = tap(y, x, k, dil, gh, gw) else { continue };
                let s = &src[sc * cin..(sc + 1) * cin];
                let wk = &w[k * cin * h..(k + 1) * cin * h];
                for (i, &v) in s.iter().enumerate() {
                    if v != 0.0 {
                        axpy(v, &wk[i * h..(i + 1) * h], o);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3_backward(
    src: &[f64],
    cin: usize,
    gh: usize,
    gw: usize,
    w: &[f64],
    h: usize,
    dil: usize,
    d_pre: &[f64],
    g_w: &mut [f64],
    g_b: &mut [f64],
    mut d_src: Option<&mut [f64]>,
) {
    for y in 0..gh {
        for x in 0..gw {
            let d = &d_pre[(y * gw + x) * h..(y * gw + x + 1) * h];
            for (gb, dv) in g_b.iter_mut().zip(d) {
                *gb += dv;
            }
            for k in 0..9 {
                let Some(sc) = tap(y, x, k, dil, gh, gw) else { continue };
                let s = &src[sc * cin..(sc + 1) * cin];
                let base = k * cin * h;
                for (i, &v) in s.iter().enumerate() {
                    if v != 0.0 {
                        axpy(v, d, &mut g_w[base + i * h..base + (i + 1) * h]);
                    }
                }
                if let Some(ds) = d_src.as_deref_mut() {
                    let dsc = &mut ds[sc * cin..(sc + 1) * cin];
                    for (i, dv) in dsc.iter_mut().enumerate() {
                        *dv += dot(&w[base + i * h..base + (i + 1) * h], d);
                    }
                }
            }
        }
    }
}

fn check_mode(mode: Mode, bundle: &ConditioningBundle) -> Result<(), DiffusionError> {
    if bundle.mode != mode {
        return Err(DiffusionError::Bundle(format!("{:?} bundle used in {:?} mode", bundle.mode, mode)));
    }
    Ok(())
}

/// `mean((eps − model(z_t, t, bundle))²)` with `z_t` the forward-diffused `x0`.
pub fn loss<M: EpsModel + ?Sized>(
    mode: Mode,
    model: &M,
    bundle: &ConditioningBundle,
    x0: &Latent,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    check_mode(mode, bundle)?;
    let z = forward_diffuse(x0, t, eps, sched)?;
    let pred = model.predict_eps(&z, t, sched, bundle)?;
    pred.check_shape(eps)?;
    Ok(pred.squared_distance(eps) / eps.data.len() as f64)
}

/// Exact gradient of [`loss`] with respect to the denoiser parameters.
pub fn grad(
    mode: Mode,
    denoiser: &ToyDenoiser,
    bundle: &ConditioningBundle,
    x0: &Latent,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    Ok(loss_and_grad(mode, denoiser, bundle, x0, t, eps, sched)?.1)
}

pub fn loss_and_grad(
    mode: Mode,
    denoiser: &ToyDenoiser,
    bundle: &ConditioningBundle,
    x0: &Latent,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
) -> Result<(f64, Vec<f64>), DiffusionError> {
    check_mode(mode, bundle)?;
    if denoiser.arch.mode != mode {
        return Err(DiffusionError::Bundle(format!("{:?} denoiser used in {:?} mode", denoiser.arch.mode, mode)));
    }
    let z = forward_diffuse(x0, t, eps, sched)?;
    denoiser.loss_grad_at(&z, sched.alpha(t), eps, bundle)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diffusion::bundle::embed_text;
    use crate::diffusion::BlockCodec;
    use rand::Rng;

    /// A random bundle of the given mode on a `g × g` latent grid.
    pub(crate) fn random_case(mode: Mode, g: usize, seed: u64) -> (ConditioningBundle, Latent, Latent) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut lat = |c: usize| Latent::from_vec(g, g, c, (0..g * g * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = ConditioningBundle {
            mode,
            masked_visible: lat(16),
            inpaint_mask: lat(1),
            text: if mode == Mode::Full { embed_text("blue blob") } else { vec![0.0; TEXT_WIDTH] },
            extra_images: lat(16),
            extra_masks: (mode == Mode::Partial).then(|| lat(12)),
        };
        let x0 = lat(16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let eps = Latent::from_vec(g, g, 16, (0..g * g * 16).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        (b, x0, eps)
    }

    pub(crate) fn small(mode: Mode) -> Architecture {
        Architecture::new(mode, &BlockCodec::default(), 6, vec![1, 2])
    }

    /// Perturbs every parameter, so the zero block no longer hides the extras.
    pub(crate) fn trained_like(arch: Architecture, seed: u64) -> ToyDenoiser {
        let mut d = ToyDenoiser::new(arch, seed).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1);
        d.params_mut().iter_mut().for_each(|p| *p += 0.05 * rng.random_range(-1.0..1.0));
        d
    }

    #[test]
    fn param_budget_and_zero_block() {
        let codec = BlockCodec::default();
        for mode in [Mode::Partial, Mode::Full] {
            let arch = Architecture::new(mode, &codec, 32, vec![1, 2, 4]);
            assert!(arch.param_count() <= MAX_PARAMS, "{}", arch.param_count());
            let d = ToyDenoiser::new(arch.clone(), 7).unwrap();
            let zb = arch.zero_block();
            assert_eq!(zb.len(), 9 * arch.extra_width() * arch.hidden);
            assert!(zb.iter().all(|&i| d.params()[i] == 0.0));
        }
        assert!(ToyDenoiser::new(Architecture::new(Mode::Full, &codec, 200, vec![1, 1]), 0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sched = NoiseSchedule::linear(100);
        for (mode, t, seed) in [(Mode::Partial, 1, 1), (Mode::Full, 50, 2), (Mode::Full, 100, 3), (Mode::Partial, 77, 4)] {
            let d = trained_like(small(mode), seed);
            let (b, x0, eps) = random_case(mode, 3, seed);
            let (_, g) = loss_and_grad(mode, &d, &b, &x0, t, &eps, &sched).unwrap();
            let h = 1e-4;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let i = rng.random_range(0..g.len());
                let mut p = d.clone();
                p.params_mut()[i] += h;
                let up = loss(mode, &p, &b, &x0, t, &eps, &sched).unwrap();
                p.params_mut()[i] -= 2.0 * h;
                let down = loss(mode, &p, &b, &x0, t, &eps, &sched).unwrap();
                let fd = (up - down) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(err < 1e-4, "{mode:?} t={t} param {i}: analytic {} fd {fd}", g[i]);
            }
        }
    }

    #[test]
    fn zero_init_ignores_extras_until_trained() {
        let sched = NoiseSchedule::linear(100);
        for mode in [Mode::Partial, Mode::Full] {
            let (b, x0, eps) = random_case(mode, 4, 9);
            let fresh = ToyDenoiser::new(small(mode), 3).unwrap();
            let z = forward_diffuse(&x0, 40, &eps, &sched).unwrap();
            let a = fresh.predict_eps(&z, 40, &sched, &b).unwrap();
            let stripped = fresh.predict_eps(&z, 40, &sched, &b.without_extras()).unwrap();
            assert!(a.data.iter().zip(&stripped.data).all(|(p, q)| (p - q).abs() < 1e-12));

            // channel permutation of the extra images
            let mut perm = b.clone();
            let c = perm.extra_images.channels;
            for cell in perm.extra_images.data.chunks_mut(c) {
                cell.reverse();
            }
            let l_fresh = loss(mode, &fresh, &b, &x0, 40, &eps, &sched).unwrap();
            assert_eq!(l_fresh, loss(mode, &fresh, &perm, &x0, 40, &eps, &sched).unwrap());
            let trained = trained_like(small(mode), 3);
            assert_ne!(loss(mode, &trained, &b, &x0, 40, &eps, &sched).unwrap(), loss(mode, &trained, &perm, &x0, 40, &eps, &sched).unwrap());

            // the zero block still learns
            let g = grad(mode, &fresh, &b, &x0, 40, &eps, &sched).unwrap();
            assert!(small(mode).zero_block().iter().any(|&i| g[i].abs() > 1e-6));
        }
    }

    struct Cheat(Latent);

    impl EpsModel for Cheat {
        fn predict_eps(&self, _: &Latent, _: usize, _: &NoiseSchedule, _: &ConditioningBundle) -> Result<Latent, DiffusionError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn loss_reference_values() {
        let sched = NoiseSchedule::linear(100);
        let (b, x0, eps) = random_case(Mode::Full, 4, 1);
        assert_eq!(loss(Mode::Full, &Cheat(eps.clone()), &b, &x0, 10, &eps, &sched).unwrap(), 0.0);
        assert!(loss(Mode::Partial, &Cheat(eps.clone()), &b, &x0, 10, &eps, &sched).is_err());

        // zero predictor: the loss is mean(eps²), about 1 over many draws
        let zero = Cheat(Latent::zeros(25, 25, 16));
        let x0 = Latent::zeros(25, 25, 16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let eps = Latent::from_vec(25, 25, 16, (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let mut b = b.clone();
        b.masked_visible = x0.clone();
        let l = loss(Mode::Full, &zero, &b, &x0, 10, &eps, &sched).unwrap();
        assert!((l - 1.0).abs() < 0.05, "{l}");
    }

    #[test]
    fn zero_loss_plateau_has_zero_gradient() {
        // only the head bias is nonzero, so eps_hat = c_z·z − c_f·b; choose x0
        // so that eps_hat equals eps exactly
        let sched = NoiseSchedule::linear(100);
        let arch = small(Mode::Full);
        let mut params = vec![0.0; arch.param_count()];
        let n = params.len();
        for k in 0..16 {
            params[n - 16 + k] = 0.1 * k as f64 - 0.5;
        }
        let d = ToyDenoiser::from_params(arch.clone(), params.clone()).unwrap();
        let (b, _, eps) = random_case(Mode::Full, 3, 2);
        let t = 30;
        let a = sched.alpha(t);
        let s = 1.0 - a + a * 0.25;
        let (c_z, c_f) = ((1.0 - a).sqrt() / s, 0.5 * a.sqrt() / s.sqrt());
        let mut x0 = eps.clone();
        for (i, v) in x0.data.iter_mut().enumerate() {
            let bias = params[n - 16 + i % 16];
            *v = (eps.data[i] * (1.0 - c_z * (1.0 - a).sqrt()) + c_f * bias) / (c_z * a.sqrt());
        }
        let (l, g) = loss_and_grad(Mode::Full, &d, &b, &x0, t, &eps, &sched).unwrap();
        assert!(l < 1e-24, "{l}");
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }
}
