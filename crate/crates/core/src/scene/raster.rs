//! Parametric shapes, fills and their rasterization at pixel centers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mask::{BinaryMask, RgbaImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Polygon,
    Blob,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Polygon, ShapeKind::Blob];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Polygon => "polygon",
            ShapeKind::Blob => "blob",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, theta: f64 },
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Convex polygon (vertices in angular order) or a star-convex blob outline.
    Polygon { points: Vec<(f64, f64)> },
}

impl Shape {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, rx, ry, theta } => {
                let (s, c) = theta.sin_cos();
                let (dx, dy) = (px - cx, py - cy);
                let u = (dx * c + dy * s) / rx;
                let v = (-dx * s + dy * c) / ry;
                u * u + v * v <= 1.0
            }
            Shape::Rectangle { x0, y0, x1, y1 } => px >= *x0 && px < *x1 && py >= *y0 && py < *y1,
            Shape::Polygon { points } => point_in_polygon(points, px, py),
        }
    }

    pub fn rasterize(&self, width: u32, height: u32) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

fn point_in_polygon(pts: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut inside = false;
    let n = pts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Samples a shape of the given kind with extent roughly `size` around `(cx, cy)`.
pub fn sample_shape<R: Rng>(kind: ShapeKind, cx: f64, cy: f64, size: f64, rng: &mut R) -> Shape {
    let r = size / 2.0;
    match kind {
        ShapeKind::Ellipse => {
            let rx = r * rng.random_range(0.6..=1.0);
            let ry = r * rng.random_range(0.45..=1.0);
            Shape::Ellipse { cx, cy, rx, ry, theta: rng.random_range(0.0..std::f64::consts::PI) }
        }
        ShapeKind::Rectangle => {
            let hw = r * rng.random_range(0.5..=1.0);
            let hh = r * rng.random_range(0.5..=1.0);
            Shape::Rectangle { x0: cx - hw, y0: cy - hh, x1: cx + hw, y1: cy + hh }
        }
        ShapeKind::Polygon => {
            let n = rng.random_range(3..=7);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let sx = r * rng.random_range(0.7..=1.0);
            let sy = r * rng.random_range(0.7..=1.0);
            Shape::Polygon { points: angles.iter().map(|a| (cx + sx * a.cos(), cy + sy * a.sin())).collect() }
        }
        ShapeKind::Blob => {
            let n = 12;
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.45..=1.0)).collect();
            // circular moving average keeps the outline star-convex but smooth
            let radii: Vec<f64> = (0..n).map(|k| (raw[(k + n - 1) % n] + 2.0 * raw[k] + raw[(k + 1) % n]) / 4.0).collect();
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let points = (0..n)
                .map(|k| {
                    let a = phase + std::f64::consts::TAU * k as f64 / n as f64;
                    (cx + r * radii[k] * a.cos(), cy + r * radii[k] * a.sin())
                })
                .collect();
            Shape::Polygon { points }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fill {
    Solid([u8; 3]),
    Checker { a: [u8; 3], b: [u8; 3], period: u32 },
    Stripes { a: [u8; 3], b: [u8; 3], period: u32, vertical: bool },
}

impl Fill {
    pub fn color_at(&self, x: u32, y: u32) -> [u8; 3] {
        match self {
            Fill::Solid(c) => *c,
            Fill::Checker { a, b, period } => {
                if ((x / period) + (y / period)) % 2 == 0 {
                    *a
                } else {
                    *b
                }
            }
            Fill::Stripes { a, b, period, vertical } => {
                let k = if *vertical { x } else { y };
                if (k / period) % 2 == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }

    pub fn primary(&self) -> [u8; 3] {
        match self {
            Fill::Solid(c) | Fill::Checker { a: c, .. } | Fill::Stripes { a: c, .. } => *c,
        }
    }
}

/// Twelve saturated hues; none is close to the default backgrounds.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

pub fn sample_fill<R: Rng>(texture_prob: f64, rng: &mut R) -> Fill {
    let a = PALETTE[rng.random_range(0..PALETTE.len())];
    if !rng.random_bool(texture_prob.clamp(0.0, 1.0)) {
        return Fill::Solid(a);
    }
    let mut b = PALETTE[rng.random_range(0..PALETTE.len())];
    if b == a {
        b = [255 - a[0], 255 - a[1], 255 - a[2]];
    }
    let period = rng.random_range(2..=4);
    if rng.random_bool(0.5) {
        Fill::Checker { a, b, period }
    } else {
        Fill::Stripes { a, b, period, vertical: rng.random_bool(0.5) }
    }
}

/// Renders `fill` inside `mask` at full opacity; transparent elsewhere.
pub fn render_fill(fill: &Fill, mask: &BinaryMask) -> RgbaImage {
    let mut img = RgbaImage::transparent(mask.width(), mask.height());
    for (x, y) in mask.iter_set() {
        let [r, g, b] = fill.color_at(x, y);
        img.put(x, y, [r, g, b, 255]);
    }
    img
}
