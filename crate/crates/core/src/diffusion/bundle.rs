//! Conditioning bundles and the stub text embedder.
//!
//! Per-cell input layout seen by the denoiser (channel-last, in this order):
//!
//! | slot            | partial                                  | full            |
//! |-----------------|------------------------------------------|-----------------|
//! | noisy latent    | `z_t / √s` (C)                           | same            |
//! | masked visible  | `E(g_{n+1})` (C)                         | `E(x·m)` (C)    |
//! | inpaint mask    | `occluder↓` (1)                          | `(¬m)↓` (1)     |
//! | time            | `√α, √(1−α)` (2)                         | same            |
//! | text            | EMPTY (D zeros)                          | `embed(y)` (D)  |
//! | extra images    | `E(x_background)` (C)                    | `E(x)` (C)      |
//! | extra masks     | `E(deoccluded) ∥ E(occluder) ∥ E(m)` (3·b²) | absent       |
//!
//! `C` is the codec's latent width and `s` the preconditioning scale of the
//! denoiser. The last two slots are the extra conditions; the input rows
//! that read them start at zero.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::latent::{Latent, LatentCodec};
use super::DiffusionError;
use crate::mask::{apply_mask, BinaryMask, RgbaImage};

pub const TEXT_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Partial,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub mode: Mode,
    pub masked_visible: Latent,
    pub inpaint_mask: Latent,
    pub text: Vec<f64>,
    pub extra_images: Latent,
    pub extra_masks: Option<Latent>,
}

impl ConditioningBundle {
    /// Conditions for one partial step: the current completion `g`, the
    /// occluder being removed, the already deoccluded region, the current
    /// instance mask and the background image.
    pub fn partial(
        codec: &dyn LatentCodec,
        current: &RgbaImage,
        occluder: &BinaryMask,
        deoccluded: &BinaryMask,
        instance: &BinaryMask,
        background: &RgbaImage,
    ) -> Result<Self, DiffusionError> {
        let masks = Latent::concat(&[&codec.encode_mask(deoccluded)?, &codec.encode_mask(occluder)?, &codec.encode_mask(instance)?])?;
        Ok(Self {
            mode: Mode::Partial,
            masked_visible: codec.encode(current)?,
            inpaint_mask: codec.downsample_mask(occluder)?,
            text: empty_text(),
            extra_images: codec.encode(background)?,
            extra_masks: Some(masks),
        })
    }

    /// Conditions for one-shot completion of instance `m` in image `x`.
    pub fn full(codec: &dyn LatentCodec, x: &RgbaImage, m: &BinaryMask, text: Vec<f64>) -> Result<Self, DiffusionError> {
        Ok(Self {
            mode: Mode::Full,
            masked_visible: codec.encode(&apply_mask(x, m)?)?,
            inpaint_mask: codec.downsample_mask(&m.complement())?,
            text,
            extra_images: codec.encode(x)?,
            extra_masks: None,
        })
    }

    /// Checks the bundle against a mode and the expected channel widths.
    pub fn validate(&self, mode: Mode, latent_channels: usize, mask_channels: usize, text_width: usize) -> Result<(), DiffusionError> {
        let bad = |msg: String| Err(DiffusionError::Bundle(msg));
        if self.mode != mode {
            return bad(format!("{:?} bundle used in {:?} mode", self.mode, mode));
        }
        let (h, w) = (self.masked_visible.height, self.masked_visible.width);
        for (name, l, c) in [
            ("masked_visible", &self.masked_visible, latent_channels),
            ("inpaint_mask", &self.inpaint_mask, 1),
            ("extra_images", &self.extra_images, latent_channels),
        ] {
            if l.shape() != (h, w, c) {
                return bad(format!("{name} has shape {:?}, expected {:?}", l.shape(), (h, w, c)));
            }
        }
        if self.text.len() != text_width {
            return bad(format!("text width {} != {text_width}", self.text.len()));
        }
        match (mode, &self.extra_masks) {
            (Mode::Partial, None) => bad("partial mode requires the deoccluded/occluder/instance masks".into()),
            (Mode::Partial, Some(m)) if m.shape() != (h, w, 3 * mask_channels) => {
                bad(format!("extra_masks has shape {:?}, expected {:?}", m.shape(), (h, w, 3 * mask_channels)))
            }
            (Mode::Partial, _) if self.text.iter().any(|&v| v != 0.0) => bad("partial mode takes the empty text embedding".into()),
            (Mode::Full, Some(_)) => bad("full mode takes no extra masks".into()),
            _ => Ok(()),
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.masked_visible.height, self.masked_visible.width)
    }

    /// Same bundle with both extra-condition slots zeroed.
    pub fn without_extras(&self) -> Self {
        let zero = |l: &Latent| Latent::zeros(l.height, l.width, l.channels);
        Self { extra_images: zero(&self.extra_images), extra_masks: self.extra_masks.as_ref().map(zero), ..self.clone() }
    }
}

pub fn empty_text() -> Vec<f64> {
    vec![0.0; TEXT_WIDTH]
}

/// Deterministic bag-of-words embedding: each lowercased token hashes to a
/// vector in `[-1, 1]^D`; the caption is their mean. Blank text is EMPTY.
pub fn embed_text(text: &str) -> Vec<f64> {
    let tokens: Vec<String> = text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect();
    let mut out = empty_text();
    if tokens.is_empty() {
        return out;
    }
    for t in &tokens {
        let h = Sha256::digest(t.as_bytes());
        for (k, v) in out.iter_mut().enumerate() {
            *v += h[k] as f64 / 127.5 - 1.0;
        }
    }
    let n = tokens.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}
