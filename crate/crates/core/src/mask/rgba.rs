use super::{BinaryMask, MaskError, Result};

/// 8-bit straight-alpha RGBA buffer, row-major, 4 bytes per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RgbaImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbaImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbaImage({}x{})", self.width, self.height)
    }
}

impl RgbaImage {
    /// Fully transparent black image.
    pub fn transparent(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (width as usize) * (height as usize) * 4] }
    }

    pub fn filled(width: u32, height: u32, px: [u8; 4]) -> Self {
        let mut img = Self::transparent(width, height);
        img.data.chunks_exact_mut(4).for_each(|c| c.copy_from_slice(&px));
        img
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) * 4 {
            return Err(MaskError::InvalidCrop(format!("raw buffer of {} bytes does not fit {width}x{height} RGBA", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 4]) -> Self {
        let mut img = Self::transparent(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = ((y as usize) * (self.width as usize) + x as usize) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: [u8; 4]) {
        let i = ((y as usize) * (self.width as usize) + x as usize) * 4;
        self.data[i..i + 4].copy_from_slice(&px);
    }

    /// Pixels with nonzero alpha.
    pub fn alpha_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.pixel(x, y)[3] > 0)
    }

    pub fn check_mask_dims(&self, m: &BinaryMask) -> Result<()> {
        if self.dims() != m.dims() {
            return Err(MaskError::DimensionMismatch { a_w: self.width, a_h: self.height, b_w: m.width(), b_h: m.height() });
        }
        Ok(())
    }

    /// Copies `src` pixels where `m` is set, keeping `self` elsewhere.
    pub fn overlay_where(&self, src: &RgbaImage, m: &BinaryMask) -> Result<RgbaImage> {
        self.check_mask_dims(m)?;
        src.check_mask_dims(m)?;
        let mut out = self.clone();
        for (x, y) in m.iter_set() {
            out.put(x, y, src.pixel(x, y));
        }
        Ok(out)
    }

    /// Mean absolute per-channel difference over all pixels.
    pub fn mean_abs_diff(&self, other: &RgbaImage) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let total: u64 = self.data.iter().zip(&other.data).map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64).sum();
        total as f64 / self.data.len().max(1) as f64
    }
}

/// `(x ∘ m) ∥ m`: zero everything outside `m`, copy RGB inside and force
/// alpha to opaque there.
pub fn apply_mask(x: &RgbaImage, m: &BinaryMask) -> Result<RgbaImage> {
    x.check_mask_dims(m)?;
    let mut out = RgbaImage::transparent(x.width, x.height);
    for (px, py) in m.iter_set() {
        let [r, g, b, _] = x.pixel(px, py);
        out.put(px, py, [r, g, b, 255]);
    }
    Ok(out)
}
