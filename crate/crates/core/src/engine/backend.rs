//! The completion-backend contract and the two non-learned backends.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::mask::{extract_crop, BinaryMask, CropSpec, RgbaImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub partial: bool,
    pub full: bool,
    /// Full completion honours `init` and `strength`.
    pub init: bool,
}

/// One step of stepwise completion: remove `occluder` from `current`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialRequest {
    /// `g_i`: the completion so far, alpha = `instance`.
    pub current: RgbaImage,
    pub instance: BinaryMask,
    pub occluder: BinaryMask,
    pub deoccluded: BinaryMask,
    pub background: RgbaImage,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullRequest {
    pub image: RgbaImage,
    pub instance: BinaryMask,
    pub text: Option<String>,
    pub init: Option<RgbaImage>,
    pub strength: Option<f64>,
    pub seed: u64,
    /// Where `image` was cropped from in the caller's full-resolution frame.
    /// In-process hint only; never sent over the wire.
    pub region: Option<CropSpec>,
}

impl FullRequest {
    pub fn new(image: RgbaImage, instance: BinaryMask, seed: u64) -> Self {
        Self { image, instance, text: None, init: None, strength: None, seed, region: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub rgba: RgbaImage,
    /// Amodal mask of the result.
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl BackendError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

pub trait CompletionBackend: Send + Sync {
    fn identity(&self) -> String;
    fn capabilities(&self) -> Capabilities;
    /// Backends that cannot take concurrent calls return true; the engine
    /// then serializes every call to backends with the same identity.
    fn single_flight(&self) -> bool {
        false
    }
    fn partial(&self, _req: &PartialRequest) -> Result<Completion, BackendError> {
        Err(BackendError::new(format!("{} does not support partial completion", self.identity())))
    }
    fn full(&self, _req: &FullRequest) -> Result<Completion, BackendError> {
        Err(BackendError::new(format!("{} does not support full completion", self.identity())))
    }
}

fn flight_lock(identity: &str) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    LOCKS.get_or_init(Default::default).lock().entry(identity.to_string()).or_default().clone()
}

pub(crate) fn call_partial(b: &dyn CompletionBackend, req: &PartialRequest) -> Result<Completion, BackendError> {
    if b.single_flight() {
        let lock = flight_lock(&b.identity());
        let _g = lock.lock();
        b.partial(req)
    } else {
        b.partial(req)
    }
}

pub(crate) fn call_full(b: &dyn CompletionBackend, req: &FullRequest) -> Result<Completion, BackendError> {
    if b.single_flight() {
        let lock = flight_lock(&b.identity());
        let _g = lock.lock();
        b.full(req)
    } else {
        b.full(req)
    }
}

/// Knows the true amodal RGBA of every instance and answers exactly.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    truths: Vec<RgbaImage>,
}

impl OracleBackend {
    /// Each truth is an amodal RGBA; its alpha support is the amodal mask.
    pub fn new(truths: Vec<RgbaImage>) -> Self {
        Self { truths }
    }

    /// Truth whose mask contains `instance`, preferring the most pixels
    /// agreeing with `seen` on the instance, then the smallest mask; the
    /// earliest wins remaining ties.
    fn select(&self, seen: &RgbaImage, instance: &BinaryMask, region: Option<&CropSpec>) -> Result<RgbaImage, BackendError> {
        let mut best: Option<((usize, std::cmp::Reverse<usize>), RgbaImage)> = None;
        for t in &self.truths {
            let t = match region {
                Some(spec) => extract_crop(t, spec).map_err(|e| BackendError::new(e.to_string()))?,
                None => t.clone(),
            };
            if t.dims() != instance.dims() {
                continue;
            }
            let m = t.alpha_mask();
            if !instance.is_subset_of(&m).unwrap_or(false) {
                continue;
            }
            let agree = instance.iter_set().filter(|&(x, y)| t.pixel(x, y)[..3] == seen.pixel(x, y)[..3]).count();
            let key = (agree, std::cmp::Reverse(m.area()));
            if best.as_ref().is_none_or(|(k, _)| key > *k) {
                best = Some((key, t));
            }
        }
        best.map(|(_, t)| t).ok_or_else(|| BackendError::new("no ground truth contains the instance mask"))
    }
}

impl CompletionBackend for OracleBackend {
    fn identity(&self) -> String {
        "oracle".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { partial: true, full: true, init: true }
    }

    /// `current` plus the truth wherever it lies under the occluder.
    fn partial(&self, req: &PartialRequest) -> Result<Completion, BackendError> {
        let truth = self.select(&req.current, &req.instance, None)?;
        let reveal = truth.alpha_mask().intersect(&req.occluder).map_err(|e| BackendError::new(e.to_string()))?;
        let rgba = req.current.overlay_where(&truth, &reveal).map_err(|e| BackendError::new(e.to_string()))?;
        let mask = req.instance.union(&reveal).map_err(|e| BackendError::new(e.to_string()))?;
        Ok(Completion { rgba, mask })
    }

    fn full(&self, req: &FullRequest) -> Result<Completion, BackendError> {
        let truth = self.select(&req.image, &req.instance, req.region.as_ref())?;
        let mask = truth.alpha_mask();
        Ok(Completion { rgba: truth, mask })
    }
}

/// Geometric guesses with no learned prior.
///
/// Partial: grows the instance into the occluder by a square dilation of
/// `radius`, painted with the instance's mean visible color. Full: fills the
/// pixels that lie within the row span or the column span of the instance.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicBackend {
    pub radius: u32,
}

impl Default for HeuristicBackend {
    fn default() -> Self {
        Self { radius: 2 }
    }
}

fn mean_color(img: &RgbaImage, m: &BinaryMask) -> [u8; 4] {
    let (mut s, mut n) = ([0u64; 3], 0u64);
    for (x, y) in m.iter_set() {
        let p = img.pixel(x, y);
        for k in 0..3 {
            s[k] += p[k] as u64;
        }
        n += 1;
    }
    if n == 0 {
        return [0, 0, 0, 255];
    }
    [(s[0] / n) as u8, (s[1] / n) as u8, (s[2] / n) as u8, 255]
}

fn paint(base: &RgbaImage, region: &BinaryMask, color: [u8; 4]) -> RgbaImage {
    let mut out = base.clone();
    for (x, y) in region.iter_set() {
        out.put(x, y, color);
    }
    out
}

impl CompletionBackend for HeuristicBackend {
    fn identity(&self) -> String {
        format!("heuristic(r={})", self.radius)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { partial: true, full: true, init: false }
    }

    fn partial(&self, req: &PartialRequest) -> Result<Completion, BackendError> {
        let err = |e: crate::mask::MaskError| BackendError::new(e.to_string());
        let grow = req.instance.dilate(self.radius).intersect(&req.occluder).map_err(err)?.difference(&req.instance).map_err(err)?;
        let color = mean_color(&req.current, &req.instance);
        let mask = req.instance.union(&grow).map_err(err)?;
        Ok(Completion { rgba: paint(&req.current, &grow, color), mask })
    }

    fn full(&self, req: &FullRequest) -> Result<Completion, BackendError> {
        let m = &req.instance;
        let (w, h) = m.dims();
        let mut rows = vec![None; h as usize];
        let mut cols = vec![None; w as usize];
        for (x, y) in m.iter_set() {
            let r: &mut Option<(u32, u32)> = &mut rows[y as usize];
            *r = Some(r.map_or((x, x), |(a, b)| (a.min(x), b.max(x))));
            let c: &mut Option<(u32, u32)> = &mut cols[x as usize];
            *c = Some(c.map_or((y, y), |(a, b)| (a.min(y), b.max(y))));
        }
        let inside = |v: u32, span: Option<(u32, u32)>| span.is_some_and(|(a, b)| v >= a && v <= b);
        let mask = BinaryMask::from_fn(w, h, |x, y| inside(x, rows[y as usize]) || inside(y, cols[x as usize]));
        let color = mean_color(&req.image, m);
        let mut rgba = RgbaImage::transparent(w, h);
        for (x, y) in mask.iter_set() {
            let p = if m.get(x, y) { req.image.pixel(x, y) } else { color };
            rgba.put(x, y, [p[0], p[1], p[2], 255]);
        }
        Ok(Completion { rgba, mask })
    }
}
