//! A completion backend driven by trained toy denoisers.

use rand::SeedableRng;

use super::backend::{BackendError, Capabilities, Completion, CompletionBackend, FullRequest, PartialRequest};
use super::sample::TrainingSample;
use crate::diffusion::{ddim_sample, decode, embed_text, Checkpoint, ConditioningBundle, DdimConfig, LatentCodec, Mode, NoiseSchedule, ToyDenoiser, TrainExample};
use crate::diffusion::{BlockCodec, DiffusionError};
use crate::mask::{apply_mask, extract_crop, extract_mask_crop, paste_crop, whole_image_spec, BinaryMask, RgbaImage};

/// Full-completion training pair: image, visible mask, caption and the true
/// amodal RGBA.
pub fn full_example(codec: &dyn LatentCodec, x: &RgbaImage, modal: &BinaryMask, text: &str, amodal: &RgbaImage) -> Result<TrainExample, DiffusionError> {
    Ok(TrainExample { bundle: ConditioningBundle::full(codec, x, modal, embed_text(text))?, target: codec.encode(amodal)? })
}

/// Partial-completion training pair from a constructed sample.
pub fn partial_example(codec: &dyn LatentCodec, s: &TrainingSample) -> Result<TrainExample, DiffusionError> {
    Ok(TrainExample {
        bundle: ConditioningBundle::partial(codec, &s.input, &s.occluder, &s.deoccluded, &s.instance, &s.background)?,
        target: codec.encode(&s.target)?,
    })
}

#[derive(Debug, Clone)]
pub struct ToyDiffusionBackend {
    pub codec: BlockCodec,
    pub full_model: Option<(ToyDenoiser, NoiseSchedule)>,
    pub partial_model: Option<(ToyDenoiser, NoiseSchedule)>,
    pub ddim: DdimConfig,
    /// Native square resolution; other sizes are resized and padded.
    pub model_side: u32,
}

impl ToyDiffusionBackend {
    pub fn new(model_side: u32, ddim: DdimConfig) -> Self {
        Self { codec: BlockCodec::default(), full_model: None, partial_model: None, ddim, model_side }
    }

    pub fn with_full(mut self, d: ToyDenoiser, s: NoiseSchedule) -> Self {
        self.full_model = Some((d, s));
        self
    }

    pub fn with_partial(mut self, d: ToyDenoiser, s: NoiseSchedule) -> Self {
        self.partial_model = Some((d, s));
        self
    }

    /// Installs a checkpoint in the slot matching its mode.
    pub fn with_checkpoint(mut self, ck: Checkpoint) -> Self {
        self.codec = BlockCodec { block: ck.codec_block };
        match ck.denoiser.arch().mode {
            Mode::Full => self.full_model = Some((ck.denoiser, ck.schedule)),
            Mode::Partial => self.partial_model = Some((ck.denoiser, ck.schedule)),
        }
        self
    }

    fn sample(&self, model: &(ToyDenoiser, NoiseSchedule), bundle: &ConditioningBundle, init: Option<&RgbaImage>, strength: Option<f64>, seed: u64) -> Result<(RgbaImage, BinaryMask), BackendError> {
        let err = |e: DiffusionError| BackendError::new(e.to_string());
        let init = init.map(|i| self.codec.encode(i)).transpose().map_err(err)?;
        let cfg = DdimConfig { strength: strength.unwrap_or(1.0), ..self.ddim };
        let (h, w) = bundle.grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let z = ddim_sample(&model.0, bundle, &model.1, &cfg, (h, w, self.codec.latent_channels()), init.as_ref(), &mut rng).map_err(err)?;
        decode(&z, &self.codec).map_err(err)
    }

    fn full_native(&self, req: &FullRequest) -> Result<Completion, BackendError> {
        let model = self.full_model.as_ref().ok_or_else(|| BackendError::new("no full-completion model loaded"))?;
        let err = |e: DiffusionError| BackendError::new(e.to_string());
        let bundle = ConditioningBundle::full(&self.codec, &req.image, &req.instance, embed_text(req.text.as_deref().unwrap_or(""))).map_err(err)?;
        let (rgba, decoded) = self.sample(model, &bundle, req.init.as_ref(), req.strength, req.seed)?;
        let mask = decoded.union(&req.instance).map_err(|e| BackendError::new(e.to_string()))?;
        let visible = apply_mask(&req.image, &req.instance).map_err(|e| BackendError::new(e.to_string()))?;
        let mut rgba = rgba.overlay_where(&visible, &req.instance).map_err(|e| BackendError::new(e.to_string()))?;
        for (x, y) in mask.complement().iter_set() {
            rgba.put(x, y, [0; 4]);
        }
        Ok(Completion { rgba, mask })
    }
}

impl CompletionBackend for ToyDiffusionBackend {
    fn identity(&self) -> String {
        format!("toy-diffusion(side={}, steps={}, eta={})", self.model_side, self.ddim.steps, self.ddim.eta)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { partial: self.partial_model.is_some(), full: self.full_model.is_some(), init: self.full_model.is_some() }
    }

    fn partial(&self, req: &PartialRequest) -> Result<Completion, BackendError> {
        let model = self.partial_model.as_ref().ok_or_else(|| BackendError::new("no partial-completion model loaded"))?;
        if req.current.dims() != (self.model_side, self.model_side) {
            return Err(BackendError::new(format!("partial completion runs at {0}x{0} only", self.model_side)));
        }
        let err = |e: DiffusionError| BackendError::new(e.to_string());
        let merr = |e: crate::mask::MaskError| BackendError::new(e.to_string());
        let bundle = ConditioningBundle::partial(&self.codec, &req.current, &req.occluder, &req.deoccluded, &req.instance, &req.background).map_err(err)?;
        let (rgba, decoded) = self.sample(model, &bundle, None, None, req.seed)?;
        // growth is confined to the occluder being removed
        let grow = decoded.intersect(&req.occluder).map_err(merr)?.difference(&req.instance).map_err(merr)?;
        let out = req.current.overlay_where(&rgba, &grow).map_err(merr)?;
        Ok(Completion { rgba: out, mask: req.instance.union(&grow).map_err(merr)? })
    }

    fn full(&self, req: &FullRequest) -> Result<Completion, BackendError> {
        let (w, h) = req.image.dims();
        if (w, h) == (self.model_side, self.model_side) {
            return self.full_native(req);
        }
        let merr = |e: crate::mask::MaskError| BackendError::new(e.to_string());
        let spec = whole_image_spec(w, h, self.model_side);
        let mut inner = FullRequest::new(extract_crop(&req.image, &spec).map_err(merr)?, extract_mask_crop(&req.instance, &spec).map_err(merr)?, req.seed);
        inner.text = req.text.clone();
        inner.strength = req.strength;
        inner.init = req.init.as_ref().map(|i| extract_crop(i, &spec)).transpose().map_err(merr)?;
        let c = self.full_native(&inner)?;
        let rgba = paste_crop(&RgbaImage::transparent(w, h), &c.rgba, &spec).map_err(merr)?;
        let mask = rgba.alpha_mask().union(&req.instance).map_err(merr)?;
        let rgba = rgba.overlay_where(&apply_mask(&req.image, &req.instance).map_err(merr)?, &req.instance).map_err(merr)?;
        Ok(Completion { rgba, mask })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Architecture, LatentCodec};
    use crate::engine::{infer_full, infer_global_to_local, TwoPassConfig};
    use crate::mask::iou;

    fn untrained(side: u32) -> ToyDiffusionBackend {
        let codec = BlockCodec::default();
        let arch = Architecture::new(Mode::Full, &codec, 8, vec![1, 2]);
        let d = ToyDenoiser::new(arch, 1).unwrap();
        let mut b = ToyDiffusionBackend::new(side, DdimConfig { steps: 8, clip: Some(1.0), ..Default::default() }).with_full(d, NoiseSchedule::cosine(100));
        // perturb so the extra-condition rows matter
        if let Some((d, _)) = b.full_model.as_mut() {
            d.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p += 0.02 * ((i * 7919 % 13) as f64 - 6.0));
        }
        assert_eq!(b.codec.latent_channels(), 16);
        b
    }

    #[test]
    fn variations_differ_and_contain_instance() {
        let b = untrained(32);
        let x = RgbaImage::filled(32, 32, [100, 50, 25, 255]);
        let m = BinaryMask::rect(32, 32, 8, 8, 20, 20);
        let v = infer_full(&x, &m, Some("ellipse"), &b, 8, 3).unwrap();
        let masks: Vec<BinaryMask> = v.into_iter().map(|c| c.unwrap().mask).collect();
        assert!(masks.iter().all(|k| m.is_subset_of(k).unwrap()));
        let distinct: std::collections::BTreeSet<Vec<String>> = masks.iter().map(|k| k.to_rows()).collect();
        assert_eq!(distinct.len(), 8);
        let truth = BinaryMask::rect(32, 32, 6, 6, 22, 22);
        let ious: Vec<f64> = masks.iter().map(|k| iou(k, &truth).unwrap()).collect();
        assert!(ious.iter().cloned().fold(0.0, f64::max) >= ious[0]);
    }

    #[test]
    fn zero_strength_second_pass_keeps_first() {
        // alpha head biased far negative: the model adds nothing, so the
        // pass-one mask is the resampled instance
        let mut b = untrained(32);
        if let Some((d, _)) = b.full_model.as_mut() {
            let n = d.params().len();
            let hidden = d.arch().hidden;
            let p = d.params_mut();
            for c in (3..16).step_by(4) {
                p[n - 16 + c] = -20.0;
                for j in 0..hidden {
                    p[n - 16 - hidden * 16 + j * 16 + c] = 0.0;
                }
            }
        }
        let x = RgbaImage::filled(128, 128, [100, 50, 25, 255]);
        let m = BinaryMask::rect(128, 128, 60, 60, 72, 70);
        let cfg = TwoPassConfig { strength: 1e-4, ..Default::default() };
        let r = infer_global_to_local(&x, &m, &b, &cfg).unwrap();
        let roi = r.roi.unwrap();
        // instance seen at 0.25 in pass one, at least twice that in pass two
        assert!(roi.scale() >= 2.0 * r.whole.scale(), "{roi:?}");
        let resampled = paste_crop(&r.first_pass, &extract_crop(&r.first_pass, &roi).unwrap(), &roi).unwrap();
        let expect = resampled.alpha_mask().union(&m).unwrap();
        assert_eq!(r.mask, expect);
    }

    #[test]
    fn lower_strength_stays_closer_to_init() {
        let b = untrained(32);
        let x = RgbaImage::filled(32, 32, [100, 50, 25, 255]);
        let m = BinaryMask::rect(32, 32, 8, 8, 20, 20);
        let init = RgbaImage::filled(32, 32, [30, 200, 90, 255]);
        let drift = |strength: f64| -> f64 {
            (0..6)
                .map(|seed| {
                    let mut req = FullRequest::new(x.clone(), m.clone(), seed);
                    req.init = Some(init.clone());
                    req.strength = Some(strength);
                    b.full(&req).unwrap().rgba.mean_abs_diff(&init)
                })
                .sum()
        };
        let (half, full) = (drift(0.5), drift(1.0));
        assert!(half < full, "{half} vs {full}");
    }
}
