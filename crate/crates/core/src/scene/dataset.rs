//! Dataset directory layout.
//!
//! ```text
//! manifest.jsonl          one ManifestRecord per line
//! {id}.modal.png          every instance (occluders are looked up here)
//! {id}.image.png          composite image      (occluded records only)
//! {id}.amodal.png         ground-truth RGBA    (occluded records only)
//! {id}.meta.json          MetaJson             (occluded records only)
//! ```
//!
//! Unoccluded instances get a record with status `unoccluded` and no
//! amodal pair. Fully occluded instances (empty modal mask) are recorded as
//! `fully_occluded` and likewise carry no pair.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{derive_graph, LayeredScene};
use crate::mask::{self, BinaryMask, MaskError, RgbaImage};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad record in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("record {0:?} has no amodal pair")]
    NoPair(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Occluded,
    Unoccluded,
    FullyOccluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub scene: String,
    pub status: RecordStatus,
    pub width: u32,
    pub height: u32,
    pub modal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amodal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<String>,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub caption: Option<String>,
    /// Removal order (nearest first).
    #[serde(default)]
    pub occluder_ids: Vec<String>,
    pub occlusion_pct: f64,
    pub amodal_area: u64,
    pub hidden_area: u64,
    /// Largest bounding-box side of the amodal mask.
    pub amodal_side: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaJson {
    pub id: String,
    pub category: Option<String>,
    pub caption: Option<String>,
    pub occluder_ids: Vec<String>,
    pub occlusion_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn occluded(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.status == RecordStatus::Occluded)
    }

    pub fn path_of(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn load_modal(&self, rec: &ManifestRecord) -> Result<BinaryMask, DatasetError> {
        Ok(mask::read_mask_png(&self.path_of(&rec.modal))?)
    }

    pub fn load_image(&self, rec: &ManifestRecord) -> Result<RgbaImage, DatasetError> {
        let f = rec.image.as_ref().ok_or_else(|| DatasetError::NoPair(rec.id.clone()))?;
        Ok(mask::read_rgba_png(&self.path_of(f))?)
    }

    pub fn load_amodal(&self, rec: &ManifestRecord) -> Result<RgbaImage, DatasetError> {
        let f = rec.amodal.as_ref().ok_or_else(|| DatasetError::NoPair(rec.id.clone()))?;
        Ok(mask::read_rgba_png(&self.path_of(f))?)
    }

    pub fn record(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Modal masks of `rec`'s occluders, in removal order.
    pub fn load_occluders(&self, rec: &ManifestRecord) -> Result<Vec<(String, BinaryMask)>, DatasetError> {
        rec.occluder_ids
            .iter()
            .map(|id| {
                let path = self.dir.join(format!("{id}.modal.png"));
                Ok((id.clone(), mask::read_mask_png(&path)?))
            })
            .collect()
    }

    /// Every occluded record as an image/modal/amodal triple.
    pub fn load_pairs(&self) -> Result<Vec<super::AmodalPair>, DatasetError> {
        self.occluded()
            .map(|r| {
                Ok(super::AmodalPair {
                    id: r.id.clone(),
                    image: self.load_image(r)?,
                    modal: self.load_modal(r)?,
                    amodal: self.load_amodal(r)?,
                    category: r.category.clone().unwrap_or_default(),
                    occlusion_pct: r.occlusion_pct,
                })
            })
            .collect()
    }

    pub fn write(&self) -> Result<PathBuf, DatasetError> {
        write_manifest(&self.dir, &self.records)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write_manifest(dir: &Path, records: &[ManifestRecord]) -> Result<PathBuf, DatasetError> {
    let path = dir.join("manifest.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io(&path))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|source| DatasetError::Json { path: path.clone(), source })?;
        writeln!(f, "{line}").map_err(io(&path))?;
    }
    f.flush().map_err(io(&path))?;
    Ok(path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|source| DatasetError::Json { path: path.to_path_buf(), source })?;
    std::fs::write(path, bytes).map_err(io(path))
}

/// Writes every instance of every scene and returns the manifest.
pub fn emit_dataset(scenes: &[LayeredScene], dir: &Path) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut records = Vec::new();
    for scene in scenes {
        let graph = derive_graph(scene);
        let composite = scene.composite();
        let modals = scene.modal_masks();
        for (i, layer) in scene.layers.iter().enumerate() {
            let id = scene.instance_id(i);
            let modal = &modals[i];
            let modal_file = format!("{id}.modal.png");
            mask::write_mask_png(&dir.join(&modal_file), modal)?;
            let amodal_area = layer.amodal.area() as u64;
            let hidden_area = amodal_area - modal.area() as u64;
            let status = if hidden_area == 0 {
                RecordStatus::Unoccluded
            } else if modal.is_empty() {
                RecordStatus::FullyOccluded
            } else {
                RecordStatus::Occluded
            };
            let occluder_ids = graph.occluders_of(&id).expect("instance just inserted");
            let occlusion_pct = hidden_area as f64 / amodal_area as f64;
            let category = Some(layer.kind.name().to_string());
            let mut rec = ManifestRecord {
                id: id.clone(),
                scene: scene.name.clone(),
                status,
                width: scene.width,
                height: scene.height,
                modal: modal_file,
                image: None,
                amodal: None,
                meta: None,
                category: category.clone(),
                caption: None,
                occluder_ids: occluder_ids.clone(),
                occlusion_pct,
                amodal_area,
                hidden_area,
                amodal_side: layer.amodal.bbox().map_or(0, |b| b.max_side()),
            };
            if status == RecordStatus::Occluded {
                let (image, amodal, meta) = (format!("{id}.image.png"), format!("{id}.amodal.png"), format!("{id}.meta.json"));
                mask::write_rgba_png(&dir.join(&image), &composite)?;
                mask::write_rgba_png(&dir.join(&amodal), &layer.rgba)?;
                write_json(&dir.join(&meta), &MetaJson { id: id.clone(), category, caption: None, occluder_ids, occlusion_pct })?;
                rec.image = Some(image);
                rec.amodal = Some(amodal);
                rec.meta = Some(meta);
            }
            records.push(rec);
        }
    }
    write_manifest(dir, &records)?;
    Ok(Manifest { dir: dir.to_path_buf(), records })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join("manifest.jsonl");
    let f = std::fs::File::open(&path).map_err(io(&path))?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(io(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| DatasetError::Json { path: path.clone(), source })?);
    }
    Ok(Manifest { dir: dir.to_path_buf(), records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{render_fill, Fill, Layer, Shape, ShapeKind};

    fn two_stacked() -> LayeredScene {
        let mk = |m: BinaryMask, c: [u8; 3]| {
            let fill = Fill::Solid(c);
            Layer { kind: ShapeKind::Rectangle, shape: Shape::Rectangle { x0: 0.0, y0: 0.0, x1: 0.0, y1: 0.0 }, rgba: render_fill(&fill, &m), fill, amodal: m }
        };
        LayeredScene {
            name: "two".into(),
            width: 8,
            height: 8,
            background: [0, 0, 0],
            layers: vec![mk(BinaryMask::rect(8, 8, 0, 0, 6, 6), [200, 0, 0]), mk(BinaryMask::rect(8, 8, 4, 4, 8, 8), [0, 200, 0])],
            seed: 0,
        }
    }

    #[test]
    fn empty_scene_list() {
        let dir = tempfile::tempdir().unwrap();
        let m = emit_dataset(&[], dir.path()).unwrap();
        assert!(m.records.is_empty());
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(files, vec![std::ffi::OsString::from("manifest.jsonl")]);
        assert!(read_manifest(dir.path()).unwrap().records.is_empty());
    }

    #[test]
    fn two_stacked_layers_one_pair() {
        let dir = tempfile::tempdir().unwrap();
        let scene = two_stacked();
        let m = emit_dataset(std::slice::from_ref(&scene), dir.path()).unwrap();
        assert_eq!(m.occluded().count(), 1);
        let rec = m.occluded().next().unwrap();
        assert_eq!(rec.id, "two_l0");
        assert_eq!(rec.occluder_ids, vec!["two_l1"]);
        assert_eq!((rec.amodal_area, rec.hidden_area), (36, 4));
        let top = m.records.iter().find(|r| r.id == "two_l1").unwrap();
        assert_eq!(top.status, RecordStatus::Unoccluded);
        assert!(top.amodal.is_none());

        // round trip
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.load_amodal(rec).unwrap(), scene.layers[0].rgba);
        assert_eq!(back.load_modal(rec).unwrap(), scene.modal_masks()[0]);
        assert_eq!(back.load_image(rec).unwrap(), scene.composite());
        let occ = back.load_occluders(rec).unwrap();
        assert_eq!(occ[0].1, scene.layers[1].amodal);
        let meta: MetaJson = serde_json::from_slice(&std::fs::read(dir.path().join("two_l0.meta.json")).unwrap()).unwrap();
        assert_eq!(meta.occluder_ids, vec!["two_l1"]);
        assert!(meta.caption.is_none());
    }

    #[test]
    fn unwritable_dir_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = emit_dataset(&[two_stacked()], &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
