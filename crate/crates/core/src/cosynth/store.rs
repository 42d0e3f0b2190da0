//! Content-addressed PNG storage keyed by sha256 hex.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::RwLock;
use sha2::{Digest, Sha256};

use super::{io_err, CosynthError};
use crate::mask::{decode_mask_png, decode_rgba_png, encode_mask_png, encode_rgba_png, BinaryMask, RgbaImage};

#[derive(Debug, Default)]
pub struct BlobStore {
    dir: Option<PathBuf>,
    cache: RwLock<HashMap<String, Arc<Vec<u8>>>>,
}

impl BlobStore {
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CosynthError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir: Some(dir), cache: Default::default() })
    }

    pub fn put(&self, bytes: Vec<u8>) -> Result<String, CosynthError> {
        let hash = hex::encode(Sha256::digest(&bytes));
        if self.cache.read().contains_key(&hash) {
            return Ok(hash);
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{hash}.png"));
            if !path.exists() {
                let tmp = dir.join(format!("{hash}.tmp"));
                std::fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
                std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
            }
        }
        self.cache.write().insert(hash.clone(), Arc::new(bytes));
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> Result<Arc<Vec<u8>>, CosynthError> {
        if let Some(b) = self.cache.read().get(hash) {
            return Ok(b.clone());
        }
        let valid = hash.len() == 64 && hash.bytes().all(|c| c.is_ascii_hexdigit());
        let dir = self.dir.as_ref().filter(|_| valid).ok_or_else(|| CosynthError::UnknownBlob(hash.into()))?;
        let path = dir.join(format!("{hash}.png"));
        let bytes = Arc::new(std::fs::read(&path).map_err(|_| CosynthError::UnknownBlob(hash.into()))?);
        self.cache.write().insert(hash.to_string(), bytes.clone());
        Ok(bytes)
    }

    pub fn put_rgba(&self, img: &RgbaImage) -> Result<String, CosynthError> {
        self.put(encode_rgba_png(img))
    }

    pub fn put_mask(&self, m: &BinaryMask) -> Result<String, CosynthError> {
        self.put(encode_mask_png(m))
    }

    pub fn rgba(&self, hash: &str) -> Result<RgbaImage, CosynthError> {
        Ok(decode_rgba_png(&self.get(hash)?)?)
    }

    pub fn mask(&self, hash: &str) -> Result<BinaryMask, CosynthError> {
        Ok(decode_mask_png(&self.get(hash)?)?)
    }
}
