//! Layered synthetic scenes with exact amodal ground truth.
//!
//! Layers are stored back to front (painter's order): layer `0` is the
//! farthest, the last layer is nearest. Every layer's amodal mask and
//! unoccluded appearance are kept, so the visible (modal) masks and the
//! occlusion order are derived rather than annotated.

mod dataset;
mod raster;
mod stats;

pub use dataset::{emit_dataset, read_manifest, DatasetError, Manifest, ManifestRecord, MetaJson, RecordStatus};
pub use raster::{render_fill, sample_fill, sample_shape, Fill, Shape, ShapeKind, PALETTE};
pub use stats::{statistics, statistics_from_files, DatasetStats, OCCLUDER_COUNT_LABELS, RESOLUTION_BINS};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{InstanceRecord, OcclusionGraph};
use crate::mask::{BinaryMask, RgbaImage};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("infeasible scene config: {0}")]
    Infeasible(String),
    #[error("failed to place a nonempty layer after {0} attempts")]
    Placement(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub min_layers: u32,
    pub max_layers: u32,
    /// Shape extent bounds in pixels.
    pub min_size: u32,
    pub max_size: u32,
    pub background: [u8; 3],
    pub texture_prob: f64,
    pub shapes: Vec<ShapeKind>,
    /// Layers whose amodal mask is smaller than this are resampled.
    pub min_area: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            min_layers: 2,
            max_layers: 5,
            min_size: 24,
            max_size: 64,
            background: [40, 40, 40],
            texture_prob: 0.4,
            shapes: ShapeKind::ALL.to_vec(),
            min_area: 16,
        }
    }
}

impl SceneConfig {
    /// Desk-scale configuration used for toy training.
    pub fn toy() -> Self {
        Self { width: 32, height: 32, min_layers: 2, max_layers: 3, min_size: 10, max_size: 20, min_area: 12, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Infeasible(m));
        if self.width == 0 || self.height == 0 {
            return bad("empty canvas".into());
        }
        if self.min_layers == 0 || self.max_layers > 8 || self.min_layers > self.max_layers {
            return bad(format!("layer bounds {}..={} outside 1..=8", self.min_layers, self.max_layers));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad(format!("size bounds {}..={}", self.min_size, self.max_size));
        }
        if self.min_size > self.width.min(self.height) {
            return bad(format!("min shape size {} larger than canvas {}x{}", self.min_size, self.width, self.height));
        }
        if self.shapes.is_empty() {
            return bad("no shape kinds enabled".into());
        }
        if !(0.0..=1.0).contains(&self.texture_prob) {
            return bad(format!("texture_prob {} outside [0,1]", self.texture_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: ShapeKind,
    pub shape: Shape,
    pub fill: Fill,
    pub amodal: BinaryMask,
    /// Unoccluded appearance: the fill inside `amodal`, transparent elsewhere.
    pub rgba: RgbaImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredScene {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub background: [u8; 3],
    /// Back to front.
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl LayeredScene {
    /// Composite image by painter's algorithm over an opaque background.
    pub fn composite(&self) -> RgbaImage {
        let [r, g, b] = self.background;
        let mut img = RgbaImage::filled(self.width, self.height, [r, g, b, 255]);
        for layer in &self.layers {
            for (x, y) in layer.amodal.iter_set() {
                img.put(x, y, layer.rgba.pixel(x, y));
            }
        }
        img
    }

    /// Visible part of every layer: its amodal mask minus all nearer amodals.
    pub fn modal_masks(&self) -> Vec<BinaryMask> {
        let mut nearer = BinaryMask::empty(self.width, self.height);
        let mut out = vec![BinaryMask::empty(self.width, self.height); self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            out[i] = layer.amodal.difference(&nearer).expect("layer dims match canvas");
            nearer.union_with(&layer.amodal).expect("layer dims match canvas");
        }
        out
    }

    /// Depth rank of layer `i`: 0 for the nearest layer.
    pub fn depth(&self, i: usize) -> u32 {
        (self.layers.len() - 1 - i) as u32
    }

    pub fn instance_id(&self, i: usize) -> String {
        format!("{}_l{}", self.name, i)
    }
}

/// Deterministically samples one scene.
pub fn sample_scene(config: &SceneConfig, seed: u64) -> Result<LayeredScene, SceneError> {
    config.validate()?;
    let mut rng = crate::seed::rng(seed, "scene");
    let n = rng.random_range(config.min_layers..=config.max_layers);
    let (w, h) = (config.width as f64, config.height as f64);
    let mut layers = Vec::with_capacity(n as usize);
    const ATTEMPTS: u32 = 64;
    for _ in 0..n {
        let mut placed = None;
        for _ in 0..ATTEMPTS {
            let kind = config.shapes[rng.random_range(0..config.shapes.len())];
            let size = rng.random_range(config.min_size..=config.max_size) as f64;
            let margin = size / 4.0;
            let cx = rng.random_range(margin.min(w / 2.0)..=(w - margin).max(w / 2.0));
            let cy = rng.random_range(margin.min(h / 2.0)..=(h - margin).max(h / 2.0));
            let shape = sample_shape(kind, cx, cy, size, &mut rng);
            let amodal = shape.rasterize(config.width, config.height);
            if amodal.area() < config.min_area.max(1) as usize {
                continue;
            }
            let fill = sample_fill(config.texture_prob, &mut rng);
            let rgba = render_fill(&fill, &amodal);
            placed = Some(Layer { kind, shape, fill, amodal, rgba });
            break;
        }
        layers.push(placed.ok_or(SceneError::Placement(ATTEMPTS))?);
    }
    Ok(LayeredScene { name: format!("s{seed:016x}"), width: config.width, height: config.height, background: config.background, layers, seed })
}

/// Scenes `0..count` under a root seed; parallel, independent of thread count.
pub fn sample_corpus(config: &SceneConfig, root_seed: u64, count: usize) -> Result<Vec<LayeredScene>, SceneError> {
    (0..count as u64).into_par_iter().map(|i| sample_scene(config, crate::seed::indexed(root_seed, "scene", i))).collect()
}

/// A partially occluded instance with its amodal truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AmodalPair {
    pub id: String,
    pub image: RgbaImage,
    pub modal: BinaryMask,
    pub amodal: RgbaImage,
    pub category: String,
    pub occlusion_pct: f64,
}

/// Partially occluded instances of `scene`, back to front.
pub fn scene_pairs(scene: &LayeredScene) -> Vec<AmodalPair> {
    let x = scene.composite();
    let modals = scene.modal_masks();
    let mut out = Vec::new();
    for (i, layer) in scene.layers.iter().enumerate() {
        let (total, visible) = (layer.amodal.area(), modals[i].area());
        if visible == 0 || visible == total {
            continue;
        }
        out.push(AmodalPair {
            id: scene.instance_id(i),
            image: x.clone(),
            modal: modals[i].clone(),
            amodal: layer.rgba.clone(),
            category: layer.kind.name().to_string(),
            occlusion_pct: (total - visible) as f64 / total as f64,
        });
    }
    out
}

/// The first `n` partially occluded instances of scenes `0, 1, …` under
/// `root_seed`.
pub fn occluded_pairs(config: &SceneConfig, root_seed: u64, n: usize) -> Result<Vec<AmodalPair>, SceneError> {
    let mut out = Vec::with_capacity(n);
    let mut next = 0u64;
    while out.len() < n {
        // a batch of scenes at a time, in parallel, consumed in order
        let batch = ((n - out.len()) / 2).clamp(8, 512) as u64;
        let scenes: Vec<LayeredScene> = (next..next + batch).into_par_iter().map(|i| sample_scene(config, crate::seed::indexed(root_seed, "scene", i))).collect::<Result<_, _>>()?;
        next += batch;
        for s in &scenes {
            out.extend(scene_pairs(s));
        }
    }
    out.truncate(n);
    Ok(out)
}

/// Ground-truth occlusion graph: modal = amodal minus nearer amodals, and
/// an edge `i → j` iff `i` is nearer than `j` and their amodals overlap.
pub fn derive_graph(scene: &LayeredScene) -> OcclusionGraph {
    let modals = scene.modal_masks();
    let mut g = OcclusionGraph::new();
    for (i, layer) in scene.layers.iter().enumerate() {
        g.insert(InstanceRecord {
            id: scene.instance_id(i),
            modal: modals[i].clone(),
            amodal: Some(layer.amodal.clone()),
            category: Some(layer.kind.name().to_string()),
            depth: Some(scene.depth(i)),
        });
    }
    for j in 0..scene.layers.len() {
        for i in j + 1..scene.layers.len() {
            if !scene.layers[i].amodal.is_disjoint(&scene.layers[j].amodal).expect("same canvas") {
                g.add_edge(scene.instance_id(i), scene.instance_id(j));
            }
        }
    }
    g
}
