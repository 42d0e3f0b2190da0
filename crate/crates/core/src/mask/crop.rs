//! Square crop geometry for the two-pass (whole image, then region of
//! interest) completion strategy.
//!
//! Resampling rules, applied per output pixel footprint:
//! - when the footprint covers at least one source pixel *center*, alpha is
//!   the max over those pixels and RGB their alpha-weighted mean;
//! - otherwise (upsampling) alpha is copied from the source pixel containing
//!   the output pixel center and RGB is alpha-weighted bilinear.
//!
//! With these rules an extract followed by a paste at any scale ≥ 1
//! reproduces the alpha support exactly, and scale 1 is a bit-exact copy.

use serde::{Deserialize, Serialize};

use super::{BinaryMask, MaskError, Result, RgbaImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    /// Top-left corner in source pixel coordinates; may be negative when the
    /// crop pads a non-square image.
    pub origin: (i64, i64),
    /// Side of the square crop in source pixels.
    pub side: u32,
    /// Side of the model-resolution raster the crop maps onto.
    pub model_side: u32,
}

impl CropSpec {
    pub fn scale(&self) -> f64 {
        self.model_side as f64 / self.side as f64
    }

    fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.side == 0 || self.model_side == 0 {
            return Err(MaskError::InvalidCrop("zero side".into()));
        }
        let (ox, oy) = self.origin;
        let s = self.side as i64;
        if ox >= width as i64 || oy >= height as i64 || ox + s <= 0 || oy + s <= 0 {
            return Err(MaskError::InvalidCrop(format!("crop {self:?} does not intersect {width}x{height}")));
        }
        Ok(())
    }

    /// Clipped rectangle `[x0,x1) × [y0,y1)` of source pixels covered.
    pub fn clip_rect(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let (ox, oy) = self.origin;
        let s = self.side as i64;
        let c = |v: i64, hi: u32| v.clamp(0, hi as i64) as u32;
        (c(ox, width), c(oy, height), c(ox + s, width), c(oy + s, height))
    }
}

/// Square crop around the mask's bounding box, enlarged by `context`,
/// translated to stay in bounds and shrunk only when larger than the image.
pub fn roi_crop_spec(amodal: &BinaryMask, context: f64, bounds: (u32, u32), model_side: u32) -> Result<CropSpec> {
    let bb = amodal.bbox().ok_or(MaskError::EmptyMask)?;
    let (w, h) = bounds;
    let mut side = ((bb.max_side() as f64) * (1.0 + context.max(0.0))).round().max(1.0) as i64;
    side = side.min(w.max(h) as i64);
    let place = |lo: u32, hi: u32, dim: u32| -> i64 {
        let dim = dim as i64;
        if side <= dim {
            ((lo as i64 + hi as i64 - side).div_euclid(2)).clamp(0, dim - side)
        } else {
            (dim - side).div_euclid(2)
        }
    };
    Ok(CropSpec { origin: (place(bb.x0, bb.x1, w), place(bb.y0, bb.y1, h)), side: side as u32, model_side })
}

/// Resize-and-pad geometry mapping a whole (possibly non-square) image
/// onto a `model_side` square.
pub fn whole_image_spec(width: u32, height: u32, model_side: u32) -> CropSpec {
    let side = width.max(height);
    CropSpec { origin: ((width as i64 - side as i64).div_euclid(2), (height as i64 - side as i64).div_euclid(2)), side, model_side }
}

enum Footprint {
    Centers(i64, i64),
    Nearest(i64, f64),
}

/// Source footprint of destination pixel `u` when destination pixel `u`
/// spans source interval `origin + [u, u+1) * num / den`.
fn footprint(u: i64, origin: i64, num: i64, den: i64) -> Footprint {
    let ceil_div = |a: i64, b: i64| -(-a).div_euclid(b);
    let kmin = ceil_div(2 * u * num - den, 2 * den);
    let kmax = ceil_div(2 * (u + 1) * num - den, 2 * den) - 1;
    if kmin <= kmax {
        Footprint::Centers(origin + kmin, origin + kmax)
    } else {
        let center = ((2 * u + 1) * num) as f64 / (2 * den) as f64;
        Footprint::Nearest(origin + (2 * u + 1) * num / (2 * den), origin as f64 + center - 0.5)
    }
}

fn src_px(src: &RgbaImage, x: i64, y: i64) -> [u8; 4] {
    if x < 0 || y < 0 || x >= src.width() as i64 || y >= src.height() as i64 {
        [0; 4]
    } else {
        src.pixel(x as u32, y as u32)
    }
}

fn weighted(samples: &[([u8; 4], f64)], alpha: u8) -> [u8; 4] {
    let aw: f64 = samples.iter().map(|(p, w)| w * p[3] as f64).sum();
    let mut rgb = [0f64; 3];
    if aw > 0.0 {
        for (p, w) in samples {
            for c in 0..3 {
                rgb[c] += w * p[3] as f64 * p[c] as f64;
            }
        }
        rgb.iter_mut().for_each(|v| *v /= aw);
    } else {
        let tw: f64 = samples.iter().map(|(_, w)| w).sum();
        if tw > 0.0 {
            for (p, w) in samples {
                for c in 0..3 {
                    rgb[c] += w * p[c] as f64;
                }
            }
            rgb.iter_mut().for_each(|v| *v /= tw);
        }
    }
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    [q(rgb[0]), q(rgb[1]), q(rgb[2]), alpha]
}

fn sample(src: &RgbaImage, origin: (i64, i64), num: i64, den: i64, u: i64, v: i64) -> [u8; 4] {
    match (footprint(u, origin.0, num, den), footprint(v, origin.1, num, den)) {
        (Footprint::Centers(x0, x1), Footprint::Centers(y0, y1)) => {
            if x0 == x1 && y0 == y1 {
                return src_px(src, x0, y0);
            }
            let mut samples = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
            let mut alpha = 0u8;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = src_px(src, x, y);
                    alpha = alpha.max(p[3]);
                    samples.push((p, 1.0));
                }
            }
            weighted(&samples, alpha)
        }
        (fx, fy) => {
            // scale is uniform, so a mixed footprint only happens at exact
            // boundaries; fall back to the nearest/bilinear rule on both axes
            let (nx, px) = nearest_of(fx, u, origin.0, num, den);
            let (ny, py) = nearest_of(fy, v, origin.1, num, den);
            let alpha = src_px(src, nx, ny)[3];
            let (ix, iy) = (px.floor() as i64, py.floor() as i64);
            let (fx, fy) = (px - ix as f64, py - iy as f64);
            let samples = [
                (src_px(src, ix, iy), (1.0 - fx) * (1.0 - fy)),
                (src_px(src, ix + 1, iy), fx * (1.0 - fy)),
                (src_px(src, ix, iy + 1), (1.0 - fx) * fy),
                (src_px(src, ix + 1, iy + 1), fx * fy),
            ];
            weighted(&samples, alpha)
        }
    }
}

fn nearest_of(f: Footprint, u: i64, origin: i64, num: i64, den: i64) -> (i64, f64) {
    match f {
        Footprint::Nearest(k, p) => (k, p),
        Footprint::Centers(..) => {
            let center = ((2 * u + 1) * num) as f64 / (2 * den) as f64;
            (origin + (2 * u + 1) * num / (2 * den), origin as f64 + center - 0.5)
        }
    }
}

/// Crops and resamples `img` to a `model_side × model_side` raster.
pub fn extract_crop(img: &RgbaImage, spec: &CropSpec) -> Result<RgbaImage> {
    spec.validate(img.width(), img.height())?;
    let m = spec.model_side;
    let (num, den) = (spec.side as i64, m as i64);
    Ok(RgbaImage::from_fn(m, m, |u, v| sample(img, spec.origin, num, den, u as i64, v as i64)))
}

/// Mask counterpart of [`extract_crop`] using the alpha rule.
pub fn extract_mask_crop(mask: &BinaryMask, spec: &CropSpec) -> Result<BinaryMask> {
    let as_img = RgbaImage::from_fn(mask.width(), mask.height(), |x, y| if mask.get(x, y) { [255; 4] } else { [0; 4] });
    Ok(extract_crop(&as_img, spec)?.alpha_mask())
}

/// Writes a model-resolution `patch` back into `dst` under `spec`; pixels
/// outside the crop rectangle are untouched.
pub fn paste_crop(dst: &RgbaImage, patch: &RgbaImage, spec: &CropSpec) -> Result<RgbaImage> {
    spec.validate(dst.width(), dst.height())?;
    if patch.dims() != (spec.model_side, spec.model_side) {
        return Err(MaskError::InvalidCrop(format!("patch {:?} does not match model side {}", patch.dims(), spec.model_side)));
    }
    let (x0, y0, x1, y1) = spec.clip_rect(dst.width(), dst.height());
    let (num, den) = (spec.model_side as i64, spec.side as i64);
    let mut out = dst.clone();
    for y in y0..y1 {
        for x in x0..x1 {
            let (rx, ry) = (x as i64 - spec.origin.0, y as i64 - spec.origin.1);
            out.put(x, y, sample(patch, (0, 0), num, den, rx, ry));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roi_whole_image() {
        let m = BinaryMask::full(50, 50);
        let s = roi_crop_spec(&m, 0.0, (50, 50), 32).unwrap();
        assert_eq!((s.origin, s.side), ((0, 0), 50));
    }

    #[test]
    fn roi_centered_with_context() {
        let m = BinaryMask::rect(100, 100, 40, 40, 60, 60);
        let s = roi_crop_spec(&m, 0.5, (100, 100), 64).unwrap();
        assert_eq!((s.origin, s.side), ((35, 35), 30));
        assert!((s.scale() - 64.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn roi_clamped_at_corner() {
        let m = BinaryMask::rect(100, 100, 0, 0, 10, 10);
        let s = roi_crop_spec(&m, 1.0, (100, 100), 64).unwrap();
        assert_eq!((s.origin, s.side), ((0, 0), 20));
    }

    #[test]
    fn roi_empty_rejected() {
        assert!(matches!(roi_crop_spec(&BinaryMask::empty(8, 8), 0.5, (8, 8), 8), Err(MaskError::EmptyMask)));
    }

    #[test]
    fn roi_shrinks_oversized_crop() {
        let m = BinaryMask::rect(40, 20, 0, 0, 40, 20);
        let s = roi_crop_spec(&m, 0.5, (40, 20), 16).unwrap();
        assert_eq!(s.side, 40);
        assert_eq!(s.origin, (0, -10));
    }

    #[test]
    fn scale_one_roundtrip_is_bit_exact() {
        let img = RgbaImage::from_fn(12, 9, |x, y| [x as u8 * 17, y as u8 * 23, (x * y) as u8, if (x + y) % 3 == 0 { 0 } else { 200 }]);
        let spec = CropSpec { origin: (2, 1), side: 6, model_side: 6 };
        let patch = extract_crop(&img, &spec).unwrap();
        let back = paste_crop(&img, &patch, &spec).unwrap();
        assert_eq!(back, img);
        let blank = paste_crop(&RgbaImage::transparent(12, 9), &patch, &spec).unwrap();
        for y in 1..7 {
            for x in 2..8 {
                assert_eq!(blank.pixel(x, y), img.pixel(x, y));
            }
        }
    }

    #[test]
    fn paste_is_local() {
        let dst = RgbaImage::filled(10, 10, [1, 2, 3, 4]);
        let patch = RgbaImage::filled(7, 7, [200, 100, 50, 255]);
        let spec = CropSpec { origin: (3, 4), side: 5, model_side: 7 };
        let out = paste_crop(&dst, &patch, &spec).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let inside = (3..8).contains(&x) && (4..9).contains(&y);
                if inside {
                    assert_eq!(out.pixel(x, y)[3], 255);
                } else {
                    assert_eq!(out.pixel(x, y), [1, 2, 3, 4]);
                }
            }
        }
    }

    #[test]
    fn upscale_single_alpha_pixel_covers_block() {
        let mut img = RgbaImage::transparent(4, 4);
        img.put(1, 2, [10, 20, 30, 255]);
        let spec = CropSpec { origin: (0, 0), side: 4, model_side: 8 };
        let up = extract_crop(&img, &spec).unwrap();
        let expect = BinaryMask::rect(8, 8, 2, 4, 4, 6);
        assert_eq!(up.alpha_mask(), expect);
        assert_eq!(up.pixel(2, 4), [10, 20, 30, 255]);
    }

    #[test]
    fn downscale_keeps_thin_alpha() {
        let m = BinaryMask::from_fn(8, 8, |x, _| x == 5);
        let spec = CropSpec { origin: (0, 0), side: 8, model_side: 2 };
        let d = extract_mask_crop(&m, &spec).unwrap();
        assert_eq!(d.to_rows(), vec!["01", "01"]);
    }

    #[test]
    fn whole_image_pads_non_square() {
        let s = whole_image_spec(30, 20, 15);
        assert_eq!((s.origin, s.side), ((0, -5), 30));
        let img = RgbaImage::filled(30, 20, [5, 5, 5, 255]);
        let e = extract_crop(&img, &s).unwrap();
        assert_eq!(e.pixel(7, 0)[3], 0);
        assert_eq!(e.pixel(7, 7)[3], 255);
    }

    proptest! {
        #[test]
        fn alpha_support_survives_upscale_roundtrip(bits in proptest::collection::vec(any::<bool>(), 100), ox in 0i64..6, oy in 0i64..6, side in 1u32..5, model in 4u32..23) {
            let m = BinaryMask::from_fn(10, 10, |x, y| bits[(y * 10 + x) as usize]);
            let img = RgbaImage::from_fn(10, 10, |x, y| if m.get(x, y) { [9, 8, 7, 255] } else { [0; 4] });
            let spec = CropSpec { origin: (ox, oy), side, model_side: model.max(side) };
            let patch = extract_crop(&img, &spec).unwrap();
            let back = paste_crop(&RgbaImage::transparent(10, 10), &patch, &spec).unwrap();
            let (x0, y0, x1, y1) = spec.clip_rect(10, 10);
            let inside = BinaryMask::rect(10, 10, x0, y0, x1, y1);
            prop_assert_eq!(back.alpha_mask(), m.intersect(&inside).unwrap());
        }

        #[test]
        fn roi_inside_bounds_when_it_fits(x0 in 0u32..60, y0 in 0u32..60, w in 1u32..40, h in 1u32..40, ctx in 0.0f64..1.5) {
            let m = BinaryMask::rect(100, 100, x0, y0, (x0 + w).min(100), (y0 + h).min(100));
            let bb = m.bbox().unwrap();
            let s = roi_crop_spec(&m, ctx, (100, 100), 32).unwrap();
            if (bb.max_side() as f64 * (1.0 + ctx)).round() <= 100.0 {
                prop_assert!(s.origin.0 >= 0 && s.origin.1 >= 0);
                prop_assert!(s.origin.0 + s.side as i64 <= 100 && s.origin.1 + s.side as i64 <= 100);
            }
        }
    }
}
