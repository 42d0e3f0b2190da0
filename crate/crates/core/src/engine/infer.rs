//! Stepwise, one-shot and two-pass inference over a completion backend.

use serde::{Deserialize, Serialize};

use super::backend::{call_full, call_partial, CompletionBackend, FullRequest, PartialRequest};
use super::EngineError;
use crate::mask::{apply_mask, extract_crop, extract_mask_crop, paste_crop, roi_crop_spec, whole_image_spec, BinaryMask, CropSpec, RgbaImage};

/// Loop state before step `step` runs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeoccState {
    pub step: usize,
    /// `g_i`.
    pub current: RgbaImage,
    /// `m_i`.
    pub instance: BinaryMask,
    pub deoccluded: BinaryMask,
    /// Occluders still to remove, next first.
    pub queue: Vec<BinaryMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub backend: String,
    pub occluder_area: usize,
    pub deoccluded_area: usize,
    pub background_area: usize,
    pub instance_area_before: usize,
    pub instance_area_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseResult {
    pub rgba: RgbaImage,
    pub mask: BinaryMask,
    pub trace: Vec<StepRecord>,
}

/// A failed run keeps the steps that completed.
#[derive(Debug, thiserror::Error)]
#[error("step {step} failed after {} completed steps: {source}", trace.len())]
pub struct StepwiseError {
    pub step: usize,
    pub trace: Vec<StepRecord>,
    pub last: Option<Box<DeoccState>>,
    #[source]
    pub source: EngineError,
}

/// Removes `occluders` one at a time, nearest first. With `n` occluders the
/// loop runs `i = n … 1` and step `i` removes `occluders[n − i]`.
///
/// Per step: `background = x ∘ (¬deoccluded ∩ ¬occluder ∩ ¬m_i)`, the
/// backend produces `g_{i−1}` and its mask `m_{i−1}`, then
/// `deoccluded ← deoccluded ∪ (occluder \ m_i)`.
pub fn infer_stepwise(x: &RgbaImage, instance: &BinaryMask, occluders: &[BinaryMask], backend: &dyn CompletionBackend) -> Result<StepwiseResult, StepwiseError> {
    infer_stepwise_seeded(x, instance, occluders, backend, 0)
}

pub fn infer_stepwise_seeded(
    x: &RgbaImage,
    instance: &BinaryMask,
    occluders: &[BinaryMask],
    backend: &dyn CompletionBackend,
    seed: u64,
) -> Result<StepwiseResult, StepwiseError> {
    let n = occluders.len();
    let fail = |step: usize, trace: &[StepRecord], last: Option<DeoccState>, source: EngineError| StepwiseError { step, trace: trace.to_vec(), last: last.map(Box::new), source };
    let setup = || -> Result<DeoccState, EngineError> {
        for o in occluders {
            x.check_mask_dims(o)?;
        }
        if instance.is_empty() {
            return Err(EngineError::FullyOccluded);
        }
        if n > 0 && !backend.capabilities().partial {
            return Err(EngineError::Unsupported { backend: backend.identity(), capability: "partial" });
        }
        Ok(DeoccState { step: n, current: apply_mask(x, instance)?, instance: instance.clone(), deoccluded: BinaryMask::empty(x.width(), x.height()), queue: occluders.to_vec() })
    };
    let mut state = setup().map_err(|e| fail(n, &[], None, e))?;
    let mut trace = Vec::with_capacity(n);
    while state.step > 0 {
        let i = state.step;
        let occluder = state.queue.remove(0);
        let step = |s: &DeoccState| -> Result<(DeoccState, StepRecord), EngineError> {
            let keep = s.deoccluded.union(&occluder)?.union(&s.instance)?.complement();
            let background = apply_mask(x, &keep)?;
            let req = PartialRequest {
                current: s.current.clone(),
                instance: s.instance.clone(),
                occluder: occluder.clone(),
                deoccluded: s.deoccluded.clone(),
                background,
                seed: crate::seed::indexed(seed, "step", i as u64),
            };
            let out = call_partial(backend, &req).map_err(|e| EngineError::Backend { backend: backend.identity(), message: e.0 })?;
            if out.mask.dims() != s.instance.dims() || out.rgba.dims() != x.dims() {
                return Err(EngineError::ContractViolation { backend: backend.identity(), detail: "output size differs from the input".into() });
            }
            if !s.instance.is_subset_of(&out.mask)? {
                let lost = s.instance.difference(&out.mask)?.area();
                return Err(EngineError::ContractViolation { backend: backend.identity(), detail: format!("instance mask shrank by {lost} pixels at step {i}") });
            }
            let deoccluded = s.deoccluded.union(&occluder.difference(&s.instance)?)?;
            let rec = StepRecord {
                step: i,
                backend: backend.identity(),
                occluder_area: occluder.area(),
                deoccluded_area: s.deoccluded.area(),
                background_area: keep.area(),
                instance_area_before: s.instance.area(),
                instance_area_after: out.mask.area(),
            };
            Ok((DeoccState { step: i - 1, current: out.rgba, instance: out.mask, deoccluded, queue: s.queue.clone() }, rec))
        };
        match step(&state) {
            Ok((next, rec)) => {
                trace.push(rec);
                state = next;
            }
            Err(e) => return Err(fail(i, &trace, Some(state), e)),
        }
    }
    Ok(StepwiseResult { rgba: state.current, mask: state.instance, trace })
}

/// One entry per variation; failures are kept in place.
pub type Variation = Result<crate::engine::Completion, EngineError>;

/// `variations` independent full completions; variation `k` uses the seed
/// `indexed(seed, "variation", k)`. Each result's mask is widened to
/// contain the instance.
pub fn infer_full(
    x: &RgbaImage,
    instance: &BinaryMask,
    text: Option<&str>,
    backend: &dyn CompletionBackend,
    variations: usize,
    seed: u64,
) -> Result<Vec<Variation>, EngineError> {
    x.check_mask_dims(instance)?;
    if variations == 0 {
        return Err(EngineError::InvalidArgument("at least one variation is required".into()));
    }
    if !backend.capabilities().full {
        return Err(EngineError::Unsupported { backend: backend.identity(), capability: "full" });
    }
    Ok((0..variations as u64)
        .map(|k| {
            let mut req = FullRequest::new(x.clone(), instance.clone(), crate::seed::indexed(seed, "variation", k));
            req.text = text.map(str::to_string);
            let c = call_full(backend, &req).map_err(|e| EngineError::Backend { backend: backend.identity(), message: e.0 })?;
            ensure_contains(x, instance, c)
        })
        .collect())
}

/// Adds any instance pixels the completion dropped, with the image's colors.
pub(crate) fn ensure_contains(x: &RgbaImage, instance: &BinaryMask, c: crate::engine::Completion) -> Result<crate::engine::Completion, EngineError> {
    if c.mask.dims() != instance.dims() || c.rgba.dims() != x.dims() {
        return Err(EngineError::ContractViolation { backend: "full".into(), detail: "output size differs from the input".into() });
    }
    if instance.is_subset_of(&c.mask)? {
        return Ok(c);
    }
    let missing = instance.difference(&c.mask)?;
    let rgba = c.rgba.overlay_where(&apply_mask(x, instance)?, &missing)?;
    Ok(crate::engine::Completion { rgba, mask: c.mask.union(instance)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPassConfig {
    pub model_side: u32,
    /// Noise strength of the second pass, in (0, 1).
    pub strength: f64,
    /// Margin around the pass-one mask, as a fraction of its larger side.
    pub context: f64,
    pub seed: u64,
    pub text: Option<String>,
}

impl Default for TwoPassConfig {
    fn default() -> Self {
        Self { model_side: 32, strength: 0.5, context: 0.25, seed: 0, text: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPassResult {
    pub rgba: RgbaImage,
    pub mask: BinaryMask,
    /// Pass-one result pasted back at full resolution.
    pub first_pass: RgbaImage,
    pub whole: CropSpec,
    /// Absent when pass one produced an empty mask.
    pub roi: Option<CropSpec>,
    pub warning: Option<String>,
}

/// Whole image at model resolution, then a reduced-strength pass over a
/// crop around the first result, initialized from it and pasted back.
pub fn infer_global_to_local(x: &RgbaImage, instance: &BinaryMask, backend: &dyn CompletionBackend, cfg: &TwoPassConfig) -> Result<TwoPassResult, EngineError> {
    x.check_mask_dims(instance)?;
    if !(cfg.strength > 0.0 && cfg.strength < 1.0) {
        return Err(EngineError::InvalidArgument(format!("second-pass strength {} outside (0, 1)", cfg.strength)));
    }
    let caps = backend.capabilities();
    if !caps.full || !caps.init {
        return Err(EngineError::Unsupported { backend: backend.identity(), capability: "full with init" });
    }
    let call = |req: &FullRequest| call_full(backend, req).map_err(|e| EngineError::Backend { backend: backend.identity(), message: e.0 });
    let (w, h) = x.dims();
    let whole = whole_image_spec(w, h, cfg.model_side);
    let mut req = FullRequest::new(extract_crop(x, &whole)?, extract_mask_crop(instance, &whole)?, crate::seed::indexed(cfg.seed, "pass", 1));
    req.text = cfg.text.clone();
    req.region = Some(whole);
    let first = call(&req)?;
    let pasted = paste_crop(&RgbaImage::transparent(w, h), &first.rgba, &whole)?;
    let first_pass = ensure_contains(x, instance, crate::engine::Completion { mask: pasted.alpha_mask(), rgba: pasted })?;
    if first_pass.mask.is_empty() {
        return Ok(TwoPassResult {
            rgba: first_pass.rgba.clone(),
            mask: first_pass.mask,
            first_pass: first_pass.rgba,
            whole,
            roi: None,
            warning: Some("first pass produced an empty mask; no region of interest".into()),
        });
    }
    let roi = roi_crop_spec(&first_pass.mask, cfg.context, (w, h), cfg.model_side)?;
    let mut req = FullRequest::new(extract_crop(x, &roi)?, extract_mask_crop(instance, &roi)?, crate::seed::indexed(cfg.seed, "pass", 2));
    req.text = cfg.text.clone();
    req.init = Some(extract_crop(&first_pass.rgba, &roi)?);
    req.strength = Some(cfg.strength);
    req.region = Some(roi);
    let second = call(&req)?;
    let merged = paste_crop(&first_pass.rgba, &second.rgba, &roi)?;
    let out = ensure_contains(x, instance, crate::engine::Completion { mask: merged.alpha_mask(), rgba: merged })?;
    Ok(TwoPassResult { rgba: out.rgba, mask: out.mask, first_pass: first_pass.rgba, whole, roi: Some(roi), warning: None })
}
