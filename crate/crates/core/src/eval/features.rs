//! Hand-crafted image features standing in for a learned embedding.
//!
//! Layout, version [`FEATURE_VERSION`], width [`FEATURE_WIDTH`]:
//!
//! | range  | content                                                     |
//! |--------|-------------------------------------------------------------|
//! | 0..24  | color histogram over opaque pixels, 8 bins per R, G, B      |
//! | 24..32 | gradient-orientation histogram, magnitude weighted          |
//! | 32     | opaque area / image area                                    |
//! | 33     | eccentricity of the opaque region                           |
//! | 34..38 | first four Hu invariants of the opaque region               |
//!
//! Histograms are normalized to sum 1 (all zero when empty). Orientation
//! bins are 45° wide and centred on multiples of 45°, bin 0 pointing
//! along +x. Gradients are central differences of luminance where a
//! neighbour outside the alpha support is replaced by the centre pixel, so
//! only texture inside the instance contributes.

use crate::mask::RgbaImage;

pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_WIDTH: usize = 38;

/// Deterministic feature vector; `None` when alpha is empty.
pub trait FeatureExtractor: Sync {
    fn width(&self) -> usize;
    fn extract(&self, image: &RgbaImage) -> Option<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HandcraftedFeatures;

impl FeatureExtractor for HandcraftedFeatures {
    fn width(&self) -> usize {
        FEATURE_WIDTH
    }

    fn extract(&self, image: &RgbaImage) -> Option<Vec<f64>> {
        extract_features(image)
    }
}

fn luma(p: [u8; 4]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

fn normalize(h: &mut [f64]) {
    let s: f64 = h.iter().sum();
    if s > 0.0 {
        h.iter_mut().for_each(|v| *v /= s);
    }
}

pub fn extract_features(image: &RgbaImage) -> Option<Vec<f64>> {
    let (w, h) = image.dims();
    let alpha = image.alpha_mask();
    if alpha.is_empty() {
        return None;
    }
    let mut color = [0.0; 24];
    let mut orient = [0.0; 8];
    let lum = |x: u32, y: u32| luma(image.pixel(x, y));
    for (x, y) in alpha.iter_set() {
        let p = image.pixel(x, y);
        for c in 0..3 {
            color[c * 8 + (p[c] / 32) as usize] += 1.0;
        }
        let centre = lum(x, y);
        let at = |dx: i64, dy: i64| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if alpha.get_signed(nx, ny) {
                lum(nx as u32, ny as u32)
            } else {
                centre
            }
        };
        let gx = (at(1, 0) - at(-1, 0)) / 2.0;
        let gy = (at(0, 1) - at(0, -1)) / 2.0;
        let mag = gx.hypot(gy);
        if mag > 1e-9 {
            let k = (gy.atan2(gx) / std::f64::consts::FRAC_PI_4).round() as i64;
            orient[k.rem_euclid(8) as usize] += mag;
        }
    }
    normalize(&mut color);
    normalize(&mut orient);

    // shape moments
    let n = alpha.area() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in alpha.iter_set() {
        sx += x as f64;
        sy += y as f64;
    }
    let (cx, cy) = (sx / n, sy / n);
    let mut mu = [[0.0f64; 4]; 4];
    for (x, y) in alpha.iter_set() {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        for (p, row) in mu.iter_mut().enumerate() {
            for (q, v) in row.iter_mut().enumerate() {
                if p + q >= 2 && p + q <= 3 {
                    *v += dx.powi(p as i32) * dy.powi(q as i32);
                }
            }
        }
    }
    let eta = |p: usize, q: usize| mu[p][q] / n.powf(1.0 + (p + q) as f64 / 2.0);
    let (a, b, c) = (mu[2][0] / n, mu[1][1] / n, mu[0][2] / n);
    let disc = ((a - c).powi(2) + 4.0 * b * b).sqrt();
    let (l1, l2) = ((a + c + disc) / 2.0, (a + c - disc) / 2.0);
    let ecc = if l1 > 0.0 { (1.0 - (l2 / l1).max(0.0)).sqrt() } else { 0.0 };
    let (n20, n02, n11, n30, n03, n21, n12) = (eta(2, 0), eta(0, 2), eta(1, 1), eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));
    let hu = [
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
        (n30 + n12).powi(2) + (n21 + n03).powi(2),
    ];

    let mut v = Vec::with_capacity(FEATURE_WIDTH);
    v.extend_from_slice(&color);
    v.extend_from_slice(&orient);
    v.push(n / (w as f64 * h as f64));
    v.push(ecc);
    v.extend_from_slice(&hu);
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(px: [u8; 4]) -> RgbaImage {
        RgbaImage::from_fn(20, 20, |x, y| if (4..14).contains(&x) && (5..15).contains(&y) { px } else { [0; 4] })
    }

    #[test]
    fn width_and_determinism() {
        let img = square([200, 10, 10, 255]);
        let v = extract_features(&img).unwrap();
        assert_eq!(v.len(), FEATURE_WIDTH);
        assert_eq!(v, extract_features(&img).unwrap());
        assert!(extract_features(&RgbaImage::transparent(4, 4)).is_none());
    }

    #[test]
    fn color_only_changes_color_bins() {
        let r = extract_features(&square([255, 0, 0, 255])).unwrap();
        let b = extract_features(&square([0, 0, 255, 255])).unwrap();
        let changed: Vec<usize> = (0..FEATURE_WIDTH).filter(|&i| r[i] != b[i]).collect();
        assert!(!changed.is_empty());
        assert!(changed.iter().all(|&i| i < 24), "{changed:?}");
    }

    #[test]
    fn rotation_shifts_orientation_by_two_bins() {
        // a radial bump: gradients in every direction, not symmetric per bin
        let n = 24u32;
        let img = RgbaImage::from_fn(n, n, |x, y| {
            let (dx, dy) = (x as f64 - 9.0, y as f64 - 13.0);
            let v = (255.0 * (-(dx * dx + 2.0 * dy * dy) / 40.0).exp() + 20.0 * (x as f64 / 5.0).sin()) as u8;
            [v, v, v, 255]
        });
        // rot(x, y) = img(n-1-y, x): a quarter turn; with y pointing down
        // a gradient at angle t ends up at t - 90°
        let rot = RgbaImage::from_fn(n, n, |x, y| img.pixel(n - 1 - y, x));
        let a = extract_features(&img).unwrap();
        let b = extract_features(&rot).unwrap();
        for k in 0..8 {
            assert!((b[24 + (k + 6) % 8] - a[24 + k]).abs() < 1e-12, "bin {k}: {:?} vs {:?}", &a[24..32], &b[24..32]);
        }
        assert!(a[24..32].iter().any(|v| (v - a[24]).abs() > 1e-3), "fixture should not be isotropic");
    }

    #[test]
    fn circle_has_low_eccentricity() {
        let disc = RgbaImage::from_fn(40, 40, |x, y| if (x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2) < 100.0 { [9, 9, 9, 255] } else { [0; 4] });
        let bar = RgbaImage::from_fn(40, 40, |x, y| if (5..35).contains(&x) && (18..22).contains(&y) { [9, 9, 9, 255] } else { [0; 4] });
        let (d, b) = (extract_features(&disc).unwrap(), extract_features(&bar).unwrap());
        assert!(d[33] < 0.1 && b[33] > 0.9);
    }
}
