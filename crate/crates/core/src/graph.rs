//! Per-image instances and pairwise occlusion order.
//!
//! Edges point from occluder to occludee. Occluders of a target are
//! returned in removal order: nearest first, then larger overlap with the
//! occludee, then id. "Nearest" uses the explicit depth rank when every
//! occluder carries one, otherwise the graph level (length of the longest
//! chain of occluders sitting on top of an instance).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mask::{self, BinaryMask, MaskError};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("unknown instance id {0:?}")]
    UnknownId(String),
    #[error("instance {0:?} has no amodal annotation")]
    MissingAmodal(String),
    #[error("instance {0:?} has an empty amodal mask")]
    EmptyAmodal(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("annotation json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: String,
    pub modal: BinaryMask,
    pub amodal: Option<BinaryMask>,
    pub category: Option<String>,
    /// 0 = nearest to the camera, when known.
    pub depth: Option<u32>,
}

impl InstanceRecord {
    pub fn new(id: impl Into<String>, modal: BinaryMask) -> Self {
        Self { id: id.into(), modal, amodal: None, category: None, depth: None }
    }
}

/// `1 − area(modal) / area(amodal)`.
pub fn occlusion_percentage(inst: &InstanceRecord) -> Result<f64, GraphError> {
    let amodal = inst.amodal.as_ref().ok_or_else(|| GraphError::MissingAmodal(inst.id.clone()))?;
    let total = amodal.area();
    if total == 0 {
        return Err(GraphError::EmptyAmodal(inst.id.clone()));
    }
    let visible = inst.modal.intersection_area(amodal)?;
    Ok(1.0 - visible as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    SelfEdge { id: String },
    DanglingId { id: String },
    MutualOcclusion { a: String, b: String },
    NonInteracting { occluder: String, occludee: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcclusionGraph {
    instances: BTreeMap<String, InstanceRecord>,
    edges: BTreeSet<(String, String)>,
}

impl OcclusionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, inst: InstanceRecord) {
        self.instances.insert(inst.id.clone(), inst);
    }

    /// Adds `occluder → occludee`. Endpoints are not checked here so that
    /// externally supplied annotations can be loaded and then [`validate`]d.
    pub fn add_edge(&mut self, occluder: impl Into<String>, occludee: impl Into<String>) {
        self.edges.insert((occluder.into(), occludee.into()));
    }

    pub fn set_edges(&mut self, edges: impl IntoIterator<Item = (String, String)>) {
        self.edges = edges.into_iter().collect();
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceRecord> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.instances.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn incoming<'a>(&'a self, target: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(a, b)| b == target && a != target).map(|(a, _)| a.as_str())
    }

    /// Longest chain of occluders above `id`, with cycles cut.
    fn level(&self, id: &str, memo: &mut BTreeMap<String, usize>, stack: &mut BTreeSet<String>) -> usize {
        if let Some(&l) = memo.get(id) {
            return l;
        }
        if !stack.insert(id.to_string()) {
            return 0;
        }
        let parents: Vec<String> = self.incoming(id).map(str::to_string).collect();
        let l = parents.iter().map(|p| 1 + self.level(p, memo, stack)).max().unwrap_or(0);
        stack.remove(id);
        memo.insert(id.to_string(), l);
        l
    }

    /// Occluder ids of `target` in removal order.
    pub fn occluders_of(&self, target: &str) -> Result<Vec<String>, GraphError> {
        let tgt = self.instances.get(target).ok_or_else(|| GraphError::UnknownId(target.to_string()))?;
        let occluders: Vec<&str> = self.incoming(target).filter(|id| self.instances.contains_key(*id)).collect();
        let use_depth = occluders.iter().all(|id| self.instances[*id].depth.is_some());
        let mut memo = BTreeMap::new();
        let tgt_region = tgt.amodal.as_ref().unwrap_or(&tgt.modal);
        let mut keyed = Vec::with_capacity(occluders.len());
        for id in occluders {
            let inst = &self.instances[id];
            let near = if use_depth { inst.depth.unwrap_or(0) as usize } else { self.level(id, &mut memo, &mut BTreeSet::new()) };
            let overlap = inst.modal.intersection_area(tgt_region).unwrap_or(0);
            keyed.push((near, std::cmp::Reverse(overlap), id.to_string()));
        }
        keyed.sort();
        Ok(keyed.into_iter().map(|(_, _, id)| id).collect())
    }

    /// Modal masks of [`occluders_of`](Self::occluders_of), same order.
    pub fn occluder_masks(&self, target: &str) -> Result<Vec<BinaryMask>, GraphError> {
        Ok(self.occluders_of(target)?.iter().map(|id| self.instances[id].modal.clone()).collect())
    }

    /// Diagnostics for human review; never fails.
    pub fn validate(&self) -> Vec<Finding> {
        let mut out = BTreeSet::new();
        for (a, b) in &self.edges {
            if a == b {
                out.insert(Finding::SelfEdge { id: a.clone() });
                continue;
            }
            for id in [a, b] {
                if !self.instances.contains_key(id) {
                    out.insert(Finding::DanglingId { id: id.clone() });
                }
            }
            if a < b && self.edges.contains(&(b.clone(), a.clone())) {
                out.insert(Finding::MutualOcclusion { a: a.clone(), b: b.clone() });
            }
            if let (Some(ia), Some(ib)) = (self.instances.get(a), self.instances.get(b)) {
                let ra = ia.amodal.as_ref().unwrap_or(&ia.modal).bbox();
                let rb = ib.amodal.as_ref().unwrap_or(&ib.modal).bbox();
                let interacts = matches!((ra, rb), (Some(x), Some(y)) if x.intersects(&y) || touching(&x, &y));
                if !interacts {
                    out.insert(Finding::NonInteracting { occluder: a.clone(), occludee: b.clone() });
                }
            }
        }
        out.into_iter().collect()
    }
}

// an occluder may sit exactly beside the visible part of its occludee
fn touching(a: &mask::BBox, b: &mask::BBox) -> bool {
    a.x0 <= b.x1 && b.x0 <= a.x1 && a.y0 <= b.y1 && b.y0 <= a.y1
}

/// On-disk annotation: `{instances:[{id,modal_png,amodal_png?,category?,depth?}], edges:[[occluder,occludee]]}`
/// with PNG paths relative to the JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub instances: Vec<AnnotationInstance>,
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationInstance {
    pub id: String,
    pub modal_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amodal_png: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<u32>,
}

impl OcclusionGraph {
    pub fn load_json(path: &Path) -> Result<Self, GraphError> {
        let io = |source| GraphError::Io { path: path.display().to_string(), source };
        let file: AnnotationFile = serde_json::from_slice(&std::fs::read(path).map_err(io)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut g = OcclusionGraph::new();
        for a in file.instances {
            let modal = mask::read_mask_png(&base.join(&a.modal_png))?;
            let amodal = a.amodal_png.as_ref().map(|p| mask::read_mask_png(&base.join(p))).transpose()?;
            g.insert(InstanceRecord { id: a.id, modal, amodal, category: a.category, depth: a.depth });
        }
        g.set_edges(file.edges);
        Ok(g)
    }

    /// Writes `{dir}/{name}.json` plus one PNG per mask.
    pub fn save_json(&self, dir: &Path, name: &str) -> Result<std::path::PathBuf, GraphError> {
        let mut instances = Vec::new();
        for inst in self.instances.values() {
            let modal_png = format!("{name}.{}.modal.png", inst.id);
            mask::write_mask_png(&dir.join(&modal_png), &inst.modal)?;
            let amodal_png = match &inst.amodal {
                Some(m) => {
                    let p = format!("{name}.{}.amodal.png", inst.id);
                    mask::write_mask_png(&dir.join(&p), m)?;
                    Some(p)
                }
                None => None,
            };
            instances.push(AnnotationInstance { id: inst.id.clone(), modal_png, amodal_png, category: inst.category.clone(), depth: inst.depth });
        }
        let file = AnnotationFile { instances, edges: self.edges.iter().cloned().collect() };
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(&file)?).map_err(|source| GraphError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::rect(16, 16, x0, y0, x1, y1)
    }

    #[test]
    fn unoccluded_has_no_occluders() {
        let mut g = OcclusionGraph::new();
        g.insert(InstanceRecord::new("a", rect(0, 0, 4, 4)));
        assert!(g.occluders_of("a").unwrap().is_empty());
        assert!(matches!(g.occluders_of("zz"), Err(GraphError::UnknownId(_))));
    }

    #[test]
    fn chain_edges_are_direct_only() {
        let mut g = OcclusionGraph::new();
        for id in ["a", "b", "c"] {
            g.insert(InstanceRecord::new(id, rect(0, 0, 2, 2)));
        }
        g.add_edge("c", "b");
        g.add_edge("b", "a");
        assert_eq!(g.occluders_of("a").unwrap(), vec!["b"]);
    }

    #[test]
    fn nearest_first_from_graph_level() {
        // bottom a; b over a; c over both
        let mut g = OcclusionGraph::new();
        g.insert(InstanceRecord::new("a", rect(0, 0, 10, 10)));
        g.insert(InstanceRecord::new("b", rect(5, 0, 12, 10)));
        g.insert(InstanceRecord::new("c", rect(8, 0, 16, 4)));
        g.add_edge("b", "a");
        g.add_edge("c", "a");
        g.add_edge("c", "b");
        assert_eq!(g.occluders_of("a").unwrap(), vec!["c", "b"]);
    }

    #[test]
    fn ties_broken_by_overlap_then_id() {
        let mut g = OcclusionGraph::new();
        let mut a = InstanceRecord::new("a", rect(2, 2, 10, 10));
        a.amodal = Some(rect(0, 0, 12, 12));
        g.insert(a);
        g.insert(InstanceRecord::new("x", rect(0, 0, 2, 12))); // 24 px overlap
        g.insert(InstanceRecord::new("y", rect(10, 0, 12, 3))); // 6 px
        g.insert(InstanceRecord::new("w", rect(10, 9, 12, 12))); // 6 px
        for o in ["x", "y", "w"] {
            g.add_edge(o, "a");
        }
        assert_eq!(g.occluders_of("a").unwrap(), vec!["x", "w", "y"]);
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let mk = |order: &[&str]| {
            let mut g = OcclusionGraph::new();
            for id in order {
                g.insert(InstanceRecord::new(*id, rect(0, 0, 3, 3)));
            }
            for id in order.iter().filter(|i| **i != "t") {
                g.add_edge(*id, "t");
            }
            g.occluders_of("t").unwrap()
        };
        assert_eq!(mk(&["t", "p", "q", "r"]), mk(&["r", "q", "t", "p"]));
    }

    #[test]
    fn occlusion_percentage_cases() {
        let mut inst = InstanceRecord::new("a", rect(0, 0, 4, 4));
        inst.amodal = Some(rect(0, 0, 4, 4));
        assert_eq!(occlusion_percentage(&inst).unwrap(), 0.0);
        inst.modal = BinaryMask::empty(16, 16);
        assert_eq!(occlusion_percentage(&inst).unwrap(), 1.0);
        inst.modal = rect(0, 0, 4, 2);
        assert_eq!(occlusion_percentage(&inst).unwrap(), 0.5);
        inst.amodal = None;
        assert!(matches!(occlusion_percentage(&inst), Err(GraphError::MissingAmodal(_))));
    }

    #[test]
    fn validate_findings() {
        assert!(OcclusionGraph::new().validate().is_empty());
        let mut g = OcclusionGraph::new();
        g.insert(InstanceRecord::new("a", rect(0, 0, 4, 4)));
        g.insert(InstanceRecord::new("b", rect(3, 3, 6, 6)));
        g.insert(InstanceRecord::new("far", rect(12, 12, 16, 16)));
        g.add_edge("a", "a");
        g.add_edge("a", "b");
        g.add_edge("b", "a");
        g.add_edge("far", "a");
        g.add_edge("ghost", "a");
        let f = g.validate();
        assert!(f.contains(&Finding::SelfEdge { id: "a".into() }));
        assert!(f.contains(&Finding::MutualOcclusion { a: "a".into(), b: "b".into() }));
        assert!(f.contains(&Finding::NonInteracting { occluder: "far".into(), occludee: "a".into() }));
        assert!(f.contains(&Finding::DanglingId { id: "ghost".into() }));
        assert_eq!(f.iter().filter(|x| matches!(x, Finding::MutualOcclusion { .. })).count(), 1);
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = OcclusionGraph::new();
        let mut a = InstanceRecord::new("a", rect(0, 0, 4, 4));
        a.amodal = Some(rect(0, 0, 6, 6));
        a.category = Some("ellipse".into());
        g.insert(a);
        g.insert(InstanceRecord::new("b", rect(4, 0, 8, 8)));
        g.add_edge("b", "a");
        let p = g.save_json(dir.path(), "img0").unwrap();
        assert_eq!(OcclusionGraph::load_json(&p).unwrap(), g);
    }
}
