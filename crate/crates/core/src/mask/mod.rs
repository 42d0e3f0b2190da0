//! Pixel-exact binary masks, straight-alpha RGBA buffers and the crop
//! geometry shared by every other module.
//!
//! Masks are fixed-size bit grids stored row-major, 64 pixels per word.
//! All set-algebra operations require matching dimensions and never mutate
//! their inputs.

mod crop;
mod io;
mod rgba;

pub use crop::{extract_crop, extract_mask_crop, paste_crop, roi_crop_spec, whole_image_spec, CropSpec};
pub use io::{decode_mask_png, decode_rgba_png, encode_mask_png, encode_rgba_png, read_mask_png, read_rgba_png, write_mask_png, write_rgba_png};
pub use rgba::{apply_mask, RgbaImage};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("dimension mismatch: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch { a_w: u32, a_h: u32, b_w: u32, b_h: u32 },
    #[error("downsample factor {factor} does not divide {width}x{height}")]
    NonDivisible { factor: u32, width: u32, height: u32 },
    #[error("empty mask has no bounding box")]
    EmptyMask,
    #[error("invalid crop: {0}")]
    InvalidCrop(String),
    #[error("png: {0}")]
    Png(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = MaskError> = std::result::Result<T, E>;

/// Which boolean combination [`set_op`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetOp {
    Union,
    Intersect,
    Difference,
}

/// Inclusive-exclusive pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn max_side(&self) -> u32 {
        self.width().max(self.height())
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, area {})", self.width, self.height, self.area())
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = (width as usize) * (height as usize);
        Self { width, height, words: vec![0; n.div_ceil(64)] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        let mut m = Self::empty(width, height);
        m.words.iter_mut().for_each(|w| *w = u64::MAX);
        m.clear_tail();
        m
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Parses rows of `0`/`1` characters; every row must have the same length.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len()) as u32;
        assert!(rows.iter().all(|r| r.len() as u32 == width), "ragged rows");
        Self::from_fn(width, height, |x, y| rows[y as usize].as_bytes()[x as usize] == b'1')
    }

    /// Axis-aligned filled rectangle `[x0, x1) × [y0, y1)` clipped to the canvas.
    pub fn rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
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

    pub fn len(&self) -> usize {
        (self.width as usize) * (self.height as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let i = (y as usize) * (self.width as usize) + x as usize;
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    /// Like [`get`](Self::get) but false outside the canvas.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u64) < self.width as u64 && (y as u64) < self.height as u64 && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "({x},{y}) outside {}x{}", self.width, self.height);
        let i = (y as usize) * (self.width as usize) + x as usize;
        if value {
            self.words[i >> 6] |= 1 << (i & 63);
        } else {
            self.words[i >> 6] &= !(1 << (i & 63));
        }
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Iterates set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * 64 + b;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    fn clear_tail(&mut self) {
        let n = self.len();
        if n % 64 != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
    }

    pub fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch { a_w: self.width, a_h: self.height, b_w: other.width, b_h: other.height });
        }
        Ok(())
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(u64, u64) -> u64) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        let words = self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask { width: self.width, height: self.height, words })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a | b)
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a & !b)
    }

    pub fn complement(&self) -> BinaryMask {
        let mut m = BinaryMask { width: self.width, height: self.height, words: self.words.iter().map(|w| !w).collect() };
        m.clear_tail();
        m
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        self.check_same_dims(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0))
    }

    pub fn is_disjoint(&self, other: &BinaryMask) -> Result<bool> {
        Ok(self.intersection_area(other)? == 0)
    }

    /// In-place union, used in hot loops where allocation matters.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_same_dims(other)?;
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b);
        Ok(())
    }

    /// Union of a list of masks; `None` for an empty list.
    pub fn union_all<'a>(masks: impl IntoIterator<Item = &'a BinaryMask>, width: u32, height: u32) -> Result<BinaryMask> {
        let mut acc = BinaryMask::empty(width, height);
        for m in masks {
            acc.union_with(m)?;
        }
        Ok(acc)
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for (x, y) in self.iter_set() {
            bb = Some(match bb {
                None => BBox { x0: x, y0: y, x1: x + 1, y1: y + 1 },
                Some(b) => BBox { x0: b.x0.min(x), y0: b.y0.min(y), x1: b.x1.max(x + 1), y1: b.y1.max(y + 1) },
            });
        }
        bb
    }

    /// Square-structuring-element dilation with the given radius.
    pub fn dilate(&self, radius: u32) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        // separable: rows then columns
        let mut rows = BinaryMask::empty(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let xi = x as i64;
                if (xi - r..=xi + r).any(|xx| self.get_signed(xx, y as i64)) {
                    rows.set(x, y, true);
                }
            }
        }
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let yi = y as i64;
            (yi - r..=yi + r).any(|yy| rows.get_signed(x as i64, yy))
        })
    }

    /// 4-connected components in row-major discovery order.
    pub fn connected_components(&self) -> Vec<BinaryMask> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if seen[start] || !self.get_index(start) {
                continue;
            }
            let mut comp = BinaryMask::empty(self.width, self.height);
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                comp.set(x as u32, y as u32, true);
                let mut visit = |j: usize| {
                    if !seen[j] && self.get_index(j) {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            out.push(comp);
        }
        out
    }

    /// Nearest-neighbour rescale of the mask by `scale`, placed with its
    /// top-left corner at `(dx, dy)` on a `width × height` canvas.
    pub fn scaled_placed(&self, scale: f64, dx: i64, dy: i64, width: u32, height: u32) -> BinaryMask {
        let sw = ((self.width as f64) * scale).round().max(1.0) as i64;
        let sh = ((self.height as f64) * scale).round().max(1.0) as i64;
        let mut out = BinaryMask::empty(width, height);
        for v in 0..sh {
            for u in 0..sw {
                let (tx, ty) = (u + dx, v + dy);
                if tx < 0 || ty < 0 || tx >= width as i64 || ty >= height as i64 {
                    continue;
                }
                let sx = (((u as f64) + 0.5) / scale).floor() as i64;
                let sy = (((v as f64) + 0.5) / scale).floor() as i64;
                if self.get_signed(sx, sy) {
                    out.set(tx as u32, ty as u32, true);
                }
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height).map(|y| (0..self.width).map(|x| if self.get(x, y) { '1' } else { '0' }).collect()).collect()
    }
}

/// Pointwise boolean combination of two equally sized masks.
pub fn set_op(a: &BinaryMask, b: &BinaryMask, kind: SetOp) -> Result<BinaryMask> {
    match kind {
        SetOp::Union => a.union(b),
        SetOp::Intersect => a.intersect(b),
        SetOp::Difference => a.difference(b),
    }
}

/// Intersection over union; two empty masks agree vacuously and score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_dims(b)?;
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Max-pooling downsample: an output cell is set iff any pixel of its
/// `factor × factor` source block is set.
pub fn downsample(m: &BinaryMask, factor: u32) -> Result<BinaryMask> {
    if factor == 0 || m.width % factor != 0 || m.height % factor != 0 {
        return Err(MaskError::NonDivisible { factor, width: m.width, height: m.height });
    }
    let mut out = BinaryMask::empty(m.width / factor, m.height / factor);
    for (x, y) in m.iter_set() {
        out.set(x / factor, y / factor, true);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(a: &BinaryMask, b: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        BinaryMask::from_fn(a.width(), a.height(), |x, y| f(a.get(x, y), b.get(x, y)))
    }

    #[test]
    fn union_with_empty_is_identity() {
        let b = BinaryMask::from_rows(&["0110", "0011", "1000"]);
        let e = BinaryMask::empty(4, 3);
        assert_eq!(set_op(&e, &b, SetOp::Union).unwrap(), b);
    }

    #[test]
    fn self_difference_is_empty() {
        let a = BinaryMask::from_rows(&["0110", "1111"]);
        assert!(set_op(&a, &a, SetOp::Difference).unwrap().is_empty());
    }

    #[test]
    fn intersect_example_and_iou() {
        let a = BinaryMask::from_rows(&["1100", "1100", "0000", "0000"]);
        let b = BinaryMask::from_rows(&["0110", "0110", "0000", "0000"]);
        let i = set_op(&a, &b, SetOp::Intersect).unwrap();
        assert_eq!(i.to_rows(), vec!["0100", "0100", "0000", "0000"]);
        assert_eq!(i.area(), 2);
        // brute-force: |a∩b| = 2, |a∪b| = 6
        let bi = brute(&a, &b, |p, q| p && q).area();
        let bu = brute(&a, &b, |p, q| p || q).area();
        assert_eq!((bi, bu), (2, 6));
        assert!((iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn iou_edge_cases() {
        let a = BinaryMask::rect(5, 5, 0, 0, 2, 2);
        let b = BinaryMask::rect(5, 5, 3, 3, 5, 5);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        let e = BinaryMask::empty(5, 5);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let a = BinaryMask::empty(3, 4);
        let b = BinaryMask::empty(4, 3);
        let err = set_op(&a, &b, SetOp::Union).unwrap_err();
        assert!(matches!(err, MaskError::DimensionMismatch { a_w: 3, a_h: 4, b_w: 4, b_h: 3 }));
        assert_eq!(err.to_string(), "dimension mismatch: 3x4 vs 4x3");
        assert!(iou(&a, &b).is_err());
    }

    #[test]
    fn downsample_cases() {
        let m = BinaryMask::from_rows(&["1010", "0110", "0000", "0001"]);
        assert_eq!(downsample(&m, 1).unwrap(), m);
        assert_eq!(downsample(&BinaryMask::full(8, 8), 8).unwrap(), BinaryMask::full(1, 1));
        let single = BinaryMask::from_fn(4, 4, |x, y| x == 3 && y == 3);
        let d = downsample(&single, 2).unwrap();
        assert_eq!(d.to_rows(), vec!["00", "01"]);
        assert!(matches!(downsample(&m, 3), Err(MaskError::NonDivisible { .. })));
        assert!(downsample(&m, 0).is_err());
    }

    #[test]
    fn components_and_dilate() {
        let m = BinaryMask::from_rows(&["1100", "0001", "0001", "1000"]);
        let cc = m.connected_components();
        assert_eq!(cc.len(), 3);
        assert_eq!(cc.iter().map(|c| c.area()).sum::<usize>(), m.area());
        let d = BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 2).dilate(1);
        assert_eq!(d, BinaryMask::rect(5, 5, 1, 1, 4, 4));
    }

    #[test]
    fn full_mask_tail_bits_clear() {
        let m = BinaryMask::full(7, 3);
        assert_eq!(m.area(), 21);
        assert_eq!(m.complement().area(), 0);
    }

    fn arb_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(any::<bool>(), n)).prop_map(move |(a, b)| {
                (
                    BinaryMask::from_fn(w, h, |x, y| a[(y * w + x) as usize]),
                    BinaryMask::from_fn(w, h, |x, y| b[(y * w + x) as usize]),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn inclusion_exclusion((a, b) in arb_pair()) {
            let u = a.union(&b).unwrap();
            let i = a.intersect(&b).unwrap();
            prop_assert_eq!(u.area() + i.area(), a.area() + b.area());
            prop_assert_eq!(u, brute(&a, &b, |p, q| p || q));
        }

        #[test]
        fn difference_disjoint_from_subtrahend((a, b) in arb_pair()) {
            let d = a.difference(&b).unwrap();
            prop_assert!(d.is_disjoint(&b).unwrap());
        }

        #[test]
        fn iou_symmetric_and_bounded((a, b) in arb_pair()) {
            let ab = iou(&a, &b).unwrap();
            prop_assert_eq!(ab, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            if !a.is_empty() {
                prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            }
        }

        #[test]
        fn downsample_monotone((a, b) in arb_pair(), f in 1u32..4) {
            let w = a.width() - a.width() % f;
            let h = a.height() - a.height() % f;
            prop_assume!(w > 0 && h > 0);
            let crop = |m: &BinaryMask| BinaryMask::from_fn(w, h, |x, y| m.get(x, y));
            let small = crop(&a).intersect(&crop(&b)).unwrap();
            let big = crop(&a);
            let ds = downsample(&small, f).unwrap();
            let db = downsample(&big, f).unwrap();
            prop_assert!(ds.is_subset_of(&db).unwrap());
        }
    }
}
