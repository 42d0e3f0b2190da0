//! Latent grids and the block-reshaping codec.
//!
//! A latent is a `height × width × channels` grid of reals stored
//! channel-last. The default codec folds each `b × b` pixel block of an RGBA
//! image into `4·b²` channels, channel index `(dy·b + dx)·4 + c`, with byte
//! values mapped to `v / 127.5 − 1`. Nothing is lost, so
//! `decode_rgb(encode(x)) == x` exactly.
//!
//! Masks are encoded the same way as `b²` channels of ±1. The downsampled
//! inpainting mask `m↓` is a single channel of 0/1 produced by max-pooling.

use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::mask::{self, BinaryMask, RgbaImage};

#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Latent {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, DiffusionError> {
        if data.len() != height * width * channels {
            return Err(DiffusionError::Shape(format!("{} values for a {height}x{width}x{channels} latent", data.len())));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn check_shape(&self, other: &Latent) -> Result<(), DiffusionError> {
        if self.shape() != other.shape() {
            return Err(DiffusionError::Shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    /// Concatenates channels of same-grid latents in order.
    pub fn concat(parts: &[&Latent]) -> Result<Latent, DiffusionError> {
        let first = parts.first().ok_or_else(|| DiffusionError::Shape("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(p) = parts.iter().find(|p| (p.height, p.width) != (h, w)) {
            return Err(DiffusionError::Shape(format!("grid {}x{} vs {}x{}", p.height, p.width, h, w)));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for p in parts {
                data.extend_from_slice(p.cell(i));
            }
        }
        Ok(Latent { height: h, width: w, channels, data })
    }

    pub fn squared_distance(&self, other: &Latent) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Encoder/decoder pair between images and latents.
pub trait LatentCodec: Send + Sync {
    fn encode(&self, img: &RgbaImage) -> Result<Latent, DiffusionError>;
    fn decode_rgb(&self, z: &Latent) -> Result<RgbaImage, DiffusionError>;
    /// Thresholds the decoded alpha at one half.
    fn decode_mask(&self, z: &Latent) -> Result<BinaryMask, DiffusionError>;
    fn encode_mask(&self, m: &BinaryMask) -> Result<Latent, DiffusionError>;
    /// `m↓`: one 0/1 channel on the latent grid.
    fn downsample_mask(&self, m: &BinaryMask) -> Result<Latent, DiffusionError>;
    fn latent_channels(&self) -> usize;
    fn mask_channels(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCodec {
    pub block: u32,
}

impl Default for BlockCodec {
    fn default() -> Self {
        Self { block: 2 }
    }
}

impl BlockCodec {
    fn grid(&self, w: u32, h: u32) -> Result<(usize, usize), DiffusionError> {
        let b = self.block;
        if b == 0 || w % b != 0 || h % b != 0 {
            return Err(DiffusionError::Shape(format!("block {b} does not divide {w}x{h}")));
        }
        Ok(((h / b) as usize, (w / b) as usize))
    }

    fn check_latent(&self, z: &Latent) -> Result<(), DiffusionError> {
        if z.channels != self.latent_channels() {
            return Err(DiffusionError::Shape(format!("{} channels, codec expects {}", z.channels, self.latent_channels())));
        }
        Ok(())
    }

    fn byte(v: f64) -> u8 {
        ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
    }
}

impl LatentCodec for BlockCodec {
    fn encode(&self, img: &RgbaImage) -> Result<Latent, DiffusionError> {
        let (gh, gw) = self.grid(img.width(), img.height())?;
        let b = self.block as usize;
        let c = self.latent_channels();
        let mut z = Latent::zeros(gh, gw, c);
        for y in 0..img.height() as usize {
            for x in 0..img.width() as usize {
                let px = img.pixel(x as u32, y as u32);
                let base = ((y / b) * gw + x / b) * c + ((y % b) * b + x % b) * 4;
                for k in 0..4 {
                    z.data[base + k] = px[k] as f64 / 127.5 - 1.0;
                }
            }
        }
        Ok(z)
    }

    fn decode_rgb(&self, z: &Latent) -> Result<RgbaImage, DiffusionError> {
        self.check_latent(z)?;
        let b = self.block as usize;
        let c = z.channels;
        Ok(RgbaImage::from_fn((z.width * b) as u32, (z.height * b) as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let base = ((y / b) * z.width + x / b) * c + ((y % b) * b + x % b) * 4;
            std::array::from_fn(|k| Self::byte(z.data[base + k]))
        }))
    }

    fn decode_mask(&self, z: &Latent) -> Result<BinaryMask, DiffusionError> {
        self.check_latent(z)?;
        let b = self.block as usize;
        let c = z.channels;
        // alpha/255 >= 0.5  <=>  latent value >= 0
        Ok(BinaryMask::from_fn((z.width * b) as u32, (z.height * b) as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            z.data[((y / b) * z.width + x / b) * c + ((y % b) * b + x % b) * 4 + 3] >= 0.0
        }))
    }

    fn encode_mask(&self, m: &BinaryMask) -> Result<Latent, DiffusionError> {
        let (gh, gw) = self.grid(m.width(), m.height())?;
        let b = self.block as usize;
        let c = self.mask_channels();
        let mut z = Latent::zeros(gh, gw, c);
        for y in 0..m.height() as usize {
            for x in 0..m.width() as usize {
                let v = if m.get(x as u32, y as u32) { 1.0 } else { -1.0 };
                z.data[((y / b) * gw + x / b) * c + (y % b) * b + x % b] = v;
            }
        }
        Ok(z)
    }

    fn downsample_mask(&self, m: &BinaryMask) -> Result<Latent, DiffusionError> {
        let d = mask::downsample(m, self.block)?;
        let data = (0..d.len()).map(|i| if d.get_index(i) { 1.0 } else { 0.0 }).collect();
        Latent::from_vec(d.height() as usize, d.width() as usize, 1, data)
    }

    fn latent_channels(&self) -> usize {
        4 * (self.block * self.block) as usize
    }

    fn mask_channels(&self) -> usize {
        (self.block * self.block) as usize
    }
}

/// RGB from `decode_rgb`, alpha replaced by the decoded mask (0 or 255).
pub fn decode(z: &Latent, codec: &dyn LatentCodec) -> Result<(RgbaImage, BinaryMask), DiffusionError> {
    let mut rgb = codec.decode_rgb(z)?;
    let m = codec.decode_mask(z)?;
    for y in 0..rgb.height() {
        for x in 0..rgb.width() {
            let mut px = rgb.pixel(x, y);
            px[3] = if m.get(x, y) { 255 } else { 0 };
            rgb.put(x, y, px);
        }
    }
    Ok((rgb, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_image(w: u32, h: u32, seed: u64, binary_alpha: bool) -> RgbaImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RgbaImage::from_fn(w, h, |_, _| {
            let a = if binary_alpha { if rng.random_bool(0.5) { 255 } else { 0 } } else { rng.random() };
            [rng.random(), rng.random(), rng.random(), a]
        })
    }

    proptest! {
        #[test]
        fn rgb_round_trip_is_exact(seed in any::<u64>(), b in 1u32..4, gw in 1u32..6, gh in 1u32..6) {
            let codec = BlockCodec { block: b };
            let img = random_image(gw * b, gh * b, seed, false);
            let z = codec.encode(&img).unwrap();
            prop_assert_eq!(z.shape(), (gh as usize, gw as usize, (4 * b * b) as usize));
            prop_assert_eq!(codec.decode_rgb(&z).unwrap(), img);
        }

        #[test]
        fn mask_threshold_matches_oracle(seed in any::<u64>()) {
            let codec = BlockCodec::default();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let z = Latent::from_vec(3, 4, 16, (0..3 * 4 * 16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let rgb = codec.decode_rgb(&z).unwrap();
            // independent pass over the decoded alpha bytes
            let oracle = BinaryMask::from_fn(8, 6, |x, y| rgb.pixel(x, y)[3] as f64 / 255.0 >= 0.5);
            prop_assert_eq!(codec.decode_mask(&z).unwrap(), oracle);
        }
    }

    #[test]
    fn decode_of_encode_with_binary_alpha() {
        let codec = BlockCodec::default();
        let img = random_image(8, 6, 3, true);
        let (back, m) = decode(&codec.encode(&img).unwrap(), &codec).unwrap();
        assert_eq!(back, img);
        assert_eq!(m, img.alpha_mask());
    }

    #[test]
    fn high_alpha_gives_full_mask() {
        let codec = BlockCodec::default();
        let mut z = Latent::zeros(2, 2, 16);
        for (i, v) in z.data.iter_mut().enumerate() {
            *v = if i % 4 == 3 { 0.3 } else { -0.7 };
        }
        assert_eq!(codec.decode_mask(&z).unwrap(), BinaryMask::full(4, 4));
    }

    #[test]
    fn mask_encoding_and_pooling() {
        let codec = BlockCodec::default();
        let m = BinaryMask::from_rows(&["1000", "0000", "0000", "0011"]);
        let e = codec.encode_mask(&m).unwrap();
        assert_eq!(e.cell(0), &[1.0, -1.0, -1.0, -1.0]);
        assert_eq!(e.cell(3), &[-1.0, -1.0, 1.0, 1.0]);
        let d = codec.downsample_mask(&m).unwrap();
        assert_eq!(d.data, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(codec.encode(&RgbaImage::transparent(5, 4)).is_err());
    }

    #[test]
    fn concat_interleaves_per_cell() {
        let a = Latent::from_vec(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let b = Latent::from_vec(1, 2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(Latent::concat(&[&a, &b]).unwrap().data, vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }
}
