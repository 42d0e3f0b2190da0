//! Denoiser checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "AMKTOYD1"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     descriptor length L, u32 LE
//! 16      L     descriptor, UTF-8 JSON: {"architecture": …, "schedule": …, "codec_block": b}
//! 16+L    8     parameter count P, u64 LE
//! 24+L    8·P   parameters, f64 LE, in the layout of `denoiser`
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::denoiser::{Architecture, ToyDenoiser};
use super::schedule::NoiseSchedule;
use super::DiffusionError;

pub const MAGIC: &[u8; 8] = b"AMKTOYD1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub architecture: Architecture,
    pub schedule: NoiseSchedule,
    pub codec_block: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub denoiser: ToyDenoiser,
    pub schedule: NoiseSchedule,
    pub codec_block: u32,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = Descriptor { architecture: self.denoiser.arch().clone(), schedule: self.schedule.clone(), codec_block: self.codec_block };
        let json = serde_json::to_vec(&desc).expect("descriptor serializes");
        let params = self.denoiser.params();
        let mut out = Vec::with_capacity(24 + json.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DiffusionError> {
        let bad = |m: &str| DiffusionError::Checkpoint(m.to_string());
        let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| bad("truncated file"));
        if take(0, 8)? != MAGIC {
            return Err(bad("not a denoiser checkpoint"));
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(DiffusionError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = u32::from_le_bytes(take(12, 4)?.try_into().unwrap()) as usize;
        let desc: Descriptor = serde_json::from_slice(take(16, len)?).map_err(|e| DiffusionError::Checkpoint(format!("descriptor: {e}")))?;
        let count = u64::from_le_bytes(take(16 + len, 8)?.try_into().unwrap()) as usize;
        let body = take(24 + len, count.checked_mul(8).ok_or_else(|| bad("bad parameter count"))?)?;
        if bytes.len() != 24 + len + 8 * count {
            return Err(bad("trailing bytes"));
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { denoiser: ToyDenoiser::from_params(desc.architecture, params)?, schedule: desc.schedule, codec_block: desc.codec_block })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| DiffusionError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        let bytes = std::fs::read(path).map_err(|source| DiffusionError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::tests::{small, trained_like};
    use crate::diffusion::Mode;

    #[test]
    fn round_trip_and_corruption() {
        let ck = Checkpoint { denoiser: trained_like(small(Mode::Partial), 1), schedule: NoiseSchedule::cosine(100), codec_block: 2 };
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Checkpoint::from_bytes(&v2).unwrap_err().to_string().contains("version 2"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }
}
