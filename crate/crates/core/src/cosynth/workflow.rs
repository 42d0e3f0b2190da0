use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::events::{read_snapshot, write_snapshot};
use super::{apply, io_err, Actor, BlobStore, CosynthError, EventLog, InstanceRef, ItemState, Rendered, ReviewItem, Snapshot, Transition, Variant, WorkflowEvent, EVENT_FORMAT_VERSION};
use crate::engine::{infer_stepwise_seeded, BackendError, Capabilities, Completion, CompletionBackend, FullRequest};
use crate::graph::{InstanceRecord, OcclusionGraph};
use crate::mask::{iou, BinaryMask, RgbaImage};
use crate::scene::{statistics, DatasetStats, Manifest, ManifestRecord, MetaJson, RecordStatus};

/// Noise strengths of the refinement grid.
pub const STRENGTHS: [f64; 3] = [0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Initial-completion attempts before the item is flagged.
    pub max_retries: u32,
    /// Seeds per strength in the refinement grid.
    pub seeds: usize,
    /// Write a snapshot after this many events; 0 disables.
    pub snapshot_every: u64,
    pub root_seed: u64,
    /// Fine masks below this IoU with the selected variant are flagged.
    pub min_fine_iou: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_retries: 3, seeds: 2, snapshot_every: 100, root_seed: 0, min_fine_iou: 0.9 }
    }
}

/// Caption and fine mask for a selected completion.
pub trait Annotator: Send + Sync {
    fn identity(&self) -> String;
    fn annotate(&self, item: &ReviewItem, rgba: &RgbaImage, mask: &BinaryMask) -> Result<(String, BinaryMask), String>;
}

/// Caption is the category name, fine mask is the completion's own mask.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubAnnotator;

impl Annotator for StubAnnotator {
    fn identity(&self) -> String {
        "stub-annotator".into()
    }

    fn annotate(&self, item: &ReviewItem, _rgba: &RgbaImage, mask: &BinaryMask) -> Result<(String, BinaryMask), String> {
        Ok((item.category.clone().unwrap_or_else(|| "object".into()), mask.clone()))
    }
}

/// Returns the init image unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl CompletionBackend for IdentityRefiner {
    fn identity(&self) -> String {
        "identity-refiner".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { partial: false, full: true, init: true }
    }

    fn full(&self, req: &FullRequest) -> Result<Completion, BackendError> {
        let init = req.init.clone().ok_or_else(|| BackendError::new("identity refiner needs an init image"))?;
        let mask = init.alpha_mask();
        Ok(Completion { rgba: init, mask })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    MarkUnoccluded,
    MarkFailed {
        #[serde(default)]
        reason: Option<String>,
    },
    Select {
        variant: String,
    },
    /// Directed `occluder → occludee` pairs among the scene's instances.
    CorrectOrder {
        edges: Vec<(String, String)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub dir: PathBuf,
    pub pairs: usize,
    pub ids: Vec<String>,
    pub stats: DatasetStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStats {
    pub items: usize,
    pub by_state: BTreeMap<String, usize>,
    pub flagged: usize,
    pub events: u64,
}

type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

fn wall_clock() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// The review queue. Reads take a shared lock; every mutation goes through
/// one writer that appends an event and then folds it into the items.
pub struct CosynthService {
    cfg: ServiceConfig,
    blobs: BlobStore,
    items: RwLock<BTreeMap<String, ReviewItem>>,
    writer: Mutex<EventLog>,
    snapshot_path: Option<PathBuf>,
    clock: Clock,
}

impl std::fmt::Debug for CosynthService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosynthService").field("cfg", &self.cfg).field("items", &self.items.read().len()).finish()
    }
}

impl CosynthService {
    pub fn memory(cfg: ServiceConfig) -> Self {
        Self { cfg, blobs: BlobStore::memory(), items: Default::default(), writer: Mutex::new(EventLog::memory()), snapshot_path: None, clock: Arc::new(wall_clock) }
    }

    /// Opens `dir/events.jsonl`, `dir/snapshot.json` and `dir/blobs/`,
    /// restoring state from the snapshot plus later events.
    pub fn open(dir: &Path, cfg: ServiceConfig) -> Result<Self, CosynthError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log = EventLog::open(dir.join("events.jsonl"))?;
        let snapshot_path = dir.join("snapshot.json");
        let (mut items, after) = match read_snapshot(&snapshot_path)? {
            Some(s) => (s.items, s.seq),
            None => (BTreeMap::new(), 0),
        };
        for ev in log.events().iter().filter(|e| e.seq > after) {
            apply(&mut items, ev)?;
        }
        Ok(Self { cfg, blobs: BlobStore::open(dir.join("blobs"))?, items: RwLock::new(items), writer: Mutex::new(log), snapshot_path: Some(snapshot_path), clock: Arc::new(wall_clock) })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn events(&self) -> Vec<WorkflowEvent> {
        self.writer.lock().events().to_vec()
    }

    pub fn item(&self, id: &str) -> Result<ReviewItem, CosynthError> {
        self.items.read().get(id).cloned().ok_or_else(|| CosynthError::UnknownItem(id.into()))
    }

    pub fn items(&self, state: Option<ItemState>) -> Vec<ReviewItem> {
        self.items.read().values().filter(|i| state.is_none_or(|s| i.state == s)).cloned().collect()
    }

    /// Item digests keyed by id.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.items.read().iter().map(|(k, v)| (k.clone(), v.digest())).collect()
    }

    /// Replays the whole log from empty and compares with the live items.
    pub fn replay_matches(&self) -> Result<bool, CosynthError> {
        let events = self.events();
        let replayed = super::replay(&events)?;
        Ok(*self.items.read() == replayed)
    }

    pub fn snapshot(&self) -> Result<(), CosynthError> {
        let log = self.writer.lock();
        self.write_snapshot_locked(&log)
    }

    fn write_snapshot_locked(&self, log: &EventLog) -> Result<(), CosynthError> {
        match &self.snapshot_path {
            Some(p) => write_snapshot(p, &Snapshot { format_version: EVENT_FORMAT_VERSION, seq: log.next_seq() - 1, items: self.items.read().clone() }),
            None => Ok(()),
        }
    }

    /// Validates, logs and applies one transition.
    fn commit(&self, id: &str, actor: &Actor, transition: Transition, expected: Option<u64>) -> Result<ReviewItem, CosynthError> {
        let mut log = self.writer.lock();
        let mut scratch = BTreeMap::new();
        if let Some(cur) = self.items.read().get(id) {
            if let Some(v) = expected.filter(|v| *v != cur.version) {
                return Err(CosynthError::Conflict { id: id.into(), expected: v, current: cur.version });
            }
            scratch.insert(id.to_string(), cur.clone());
        }
        let ev = WorkflowEvent { seq: log.next_seq(), item: id.into(), actor: actor.clone(), timestamp_ms: (self.clock)(), transition };
        apply(&mut scratch, &ev)?;
        log.append(ev)?;
        let item = scratch.remove(id).expect("applied");
        self.items.write().insert(id.to_string(), item.clone());
        if self.cfg.snapshot_every > 0 && (log.next_seq() - 1) % self.cfg.snapshot_every == 0 {
            self.write_snapshot_locked(&log)?;
        }
        Ok(item)
    }

    /// One pending item per occluded record; ids already queued are skipped.
    /// Returns how many items were added.
    pub fn enqueue(&self, manifest: &Manifest) -> Result<usize, CosynthError> {
        let mut added = 0;
        for rec in manifest.occluded() {
            if self.items.read().contains_key(&rec.id) {
                continue;
            }
            let image = self.blobs.put_rgba(&manifest.load_image(rec)?)?;
            let modal = self.blobs.put_mask(&manifest.load_modal(rec)?)?;
            let occluders = manifest.load_occluders(rec)?.into_iter().map(|(id, m)| Ok(InstanceRef { id, modal: self.blobs.put_mask(&m)? })).collect::<Result<_, CosynthError>>()?;
            let mut scene_instances = Vec::new();
            for other in manifest.records.iter().filter(|o| o.scene == rec.scene && o.id != rec.id) {
                scene_instances.push(InstanceRef { id: other.id.clone(), modal: self.blobs.put_mask(&manifest.load_modal(other)?)? });
            }
            let t = Transition::Enqueued { scene: rec.scene.clone(), image, modal, category: rec.category.clone(), occlusion_pct: rec.occlusion_pct, occluders, scene_instances };
            self.commit(&rec.id, &Actor::System, t, None)?;
            added += 1;
        }
        Ok(added)
    }

    fn guard(item: &ReviewItem, want: ItemState, action: &str) -> Result<(), CosynthError> {
        if item.state != want {
            return Err(CosynthError::IllegalTransition { id: item.id.clone(), state: item.state, action: action.into() });
        }
        Ok(())
    }

    /// Stepwise completion with up to `max_retries` attempts, each logged.
    pub fn run_initial(&self, id: &str, backend: &dyn CompletionBackend, actor: &Actor) -> Result<ReviewItem, CosynthError> {
        let item = self.item(id)?;
        Self::guard(&item, ItemState::Pending, "run_initial")?;
        let x = self.blobs.rgba(&item.image)?;
        let modal = self.blobs.mask(&item.modal)?;
        let occluders: Vec<BinaryMask> = item.occluders.iter().map(|o| self.blobs.mask(&o.modal)).collect::<Result<_, _>>()?;
        let mut version = item.version;
        let tries = self.cfg.max_retries.max(1);
        let mut last = String::new();
        for attempt in 1..=tries {
            let seed = crate::seed::substream(crate::seed::indexed(self.cfg.root_seed, "cosynth_initial", attempt as u64), id);
            match infer_stepwise_seeded(&x, &modal, &occluders, backend, seed) {
                Ok(r) => {
                    let result = Rendered { rgba: self.blobs.put_rgba(&r.rgba)?, mask: self.blobs.put_mask(&r.mask)? };
                    let t = Transition::InitialCompleted { backend: backend.identity(), result, steps: r.trace.len() };
                    return self.commit(id, actor, t, Some(version));
                }
                Err(e) => {
                    last = e.to_string();
                    let t = Transition::InitialFailed { backend: backend.identity(), attempt, error: last.clone(), exhausted: attempt == tries };
                    version = self.commit(id, actor, t, Some(version))?.version;
                }
            }
        }
        Err(CosynthError::Backend(last))
    }

    /// `seeds × 3` variants from the initial result, one per seed and strength.
    pub fn refine(&self, id: &str, refiner: &dyn CompletionBackend, seeds: usize, actor: &Actor) -> Result<ReviewItem, CosynthError> {
        let item = self.item(id)?;
        Self::guard(&item, ItemState::Initial, "refine")?;
        if seeds == 0 {
            return Err(CosynthError::Precondition("refine needs at least one seed".into()));
        }
        let initial = item.initial.as_ref().expect("initial state carries a result");
        let x = self.blobs.rgba(&item.image)?;
        let modal = self.blobs.mask(&item.modal)?;
        let init = self.blobs.rgba(&initial.rgba)?;
        let grid: Vec<(usize, f64)> = (0..seeds).flat_map(|s| STRENGTHS.map(|k| (s, k))).collect();
        let outs: Vec<Result<Completion, BackendError>> = grid
            .par_iter()
            .map(|&(s, strength)| {
                let mut req = FullRequest::new(x.clone(), modal.clone(), crate::seed::indexed(self.cfg.root_seed, "cosynth_refine", s as u64));
                req.init = Some(init.clone());
                req.strength = Some(strength);
                req.text = item.category.clone();
                crate::engine::call_full(refiner, &req)
            })
            .collect();
        let mut variants = Vec::with_capacity(grid.len());
        for (&(s, strength), out) in grid.iter().zip(outs) {
            match out {
                Ok(c) => variants.push(Variant {
                    id: format!("s{s}-{}", (strength * 100.0).round() as u32),
                    seed: s as u64,
                    strength,
                    rgba: self.blobs.put_rgba(&c.rgba)?,
                    mask: self.blobs.put_mask(&c.mask)?,
                }),
                Err(e) => {
                    let t = Transition::RefineFailed { refiner: refiner.identity(), error: e.to_string(), partial: variants };
                    self.commit(id, actor, t, Some(item.version))?;
                    return Err(CosynthError::Backend(e.to_string()));
                }
            }
        }
        self.commit(id, actor, Transition::VariantsProduced { refiner: refiner.identity(), variants }, Some(item.version))
    }

    /// Applies a human decision; `expected_version` enables conflict checks.
    pub fn decide(&self, id: &str, decision: Decision, actor: &Actor, expected_version: Option<u64>) -> Result<ReviewItem, CosynthError> {
        let item = self.item(id)?;
        let t = match decision {
            Decision::MarkUnoccluded => Transition::MarkedUnoccluded,
            Decision::MarkFailed { reason } => Transition::MarkedFailed { reason },
            Decision::Select { variant } => Transition::Selected { variant },
            Decision::CorrectOrder { edges } => {
                let occluders = self.order_from_edges(&item, &edges)?;
                Transition::OrderCorrected { edges, occluders }
            }
        };
        self.commit(id, actor, t, expected_version)
    }

    fn order_from_edges(&self, item: &ReviewItem, edges: &[(String, String)]) -> Result<Vec<InstanceRef>, CosynthError> {
        let mut g = OcclusionGraph::new();
        g.insert(InstanceRecord::new(item.id.clone(), self.blobs.mask(&item.modal)?));
        for o in &item.scene_instances {
            g.insert(InstanceRecord::new(o.id.clone(), self.blobs.mask(&o.modal)?));
        }
        for (a, b) in edges {
            if a == b {
                return Err(CosynthError::InvalidOrder(format!("self edge on {a}")));
            }
            for id in [a, b] {
                if g.instance(id).is_none() {
                    return Err(CosynthError::InvalidOrder(format!("{id} is not an instance of scene {}", item.scene)));
                }
            }
        }
        g.set_edges(edges.iter().cloned());
        let ids = g.occluders_of(&item.id).map_err(|e| CosynthError::InvalidOrder(e.to_string()))?;
        Ok(ids.into_iter().map(|id| item.scene_instances.iter().find(|o| o.id == id).cloned().expect("checked above")).collect())
    }

    /// Caption and fine mask for the selected variant. A fine mask that
    /// disagrees with the variant flags the item instead of annotating it.
    pub fn annotate(&self, id: &str, annotator: &dyn Annotator, actor: &Actor) -> Result<ReviewItem, CosynthError> {
        let item = self.item(id)?;
        Self::guard(&item, ItemState::Selected, "annotate")?;
        let v = item.selected_variant().expect("selected state carries a selection").clone();
        let rgba = self.blobs.rgba(&v.rgba)?;
        let mask = self.blobs.mask(&v.mask)?;
        let (caption, fine) = match annotator.annotate(&item, &rgba, &mask) {
            Ok(r) => r,
            Err(e) => {
                self.commit(id, actor, Transition::AnnotateFailed { annotator: annotator.identity(), error: e.clone() }, Some(item.version))?;
                return Err(CosynthError::Backend(e));
            }
        };
        let score = iou(&fine, &mask).ok();
        let t = match score {
            Some(s) if s >= self.cfg.min_fine_iou => Transition::Annotated { annotator: annotator.identity(), annotation: super::Annotation { caption, fine_mask: self.blobs.put_mask(&fine)?, iou: s } },
            Some(s) => Transition::AnnotationFlagged { annotator: annotator.identity(), reason: format!("fine mask IoU {s:.3} below {}", self.cfg.min_fine_iou), iou: Some(s) },
            None => Transition::AnnotationFlagged { annotator: annotator.identity(), reason: "fine mask has the wrong size".into(), iou: None },
        };
        self.commit(id, actor, t, Some(item.version))
    }

    /// Writes every annotated item as a dataset pair plus `stats.json`.
    pub fn export(&self, dir: &Path) -> Result<ExportSummary, CosynthError> {
        let done = self.items(Some(ItemState::Annotated));
        if done.is_empty() {
            return Err(CosynthError::Precondition("export needs at least one annotated item".into()));
        }
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(io_err(&p))
        };
        let mut records = Vec::new();
        for it in &done {
            let v = it.selected_variant().expect("annotated items keep their selection");
            let ann = it.annotation.as_ref().expect("annotated items carry an annotation");
            let fine = self.blobs.mask(&ann.fine_mask)?;
            let modal = self.blobs.mask(&it.modal)?;
            let src = self.blobs.rgba(&v.rgba)?;
            let mut amodal = RgbaImage::transparent(fine.width(), fine.height());
            for (x, y) in fine.iter_set() {
                let [r, g, b, _] = src.pixel(x, y);
                amodal.put(x, y, [r, g, b, 255]);
            }
            let (image_f, modal_f, amodal_f, meta_f) = (format!("{}.image.png", it.id), format!("{}.modal.png", it.id), format!("{}.amodal.png", it.id), format!("{}.meta.json", it.id));
            write(&image_f, &self.blobs.get(&it.image)?)?;
            write(&modal_f, &self.blobs.get(&it.modal)?)?;
            write(&amodal_f, &crate::mask::encode_rgba_png(&amodal))?;
            for o in &it.occluders {
                write(&format!("{}.modal.png", o.id), &self.blobs.get(&o.modal)?)?;
            }
            let hidden = fine.difference(&modal)?.area() as u64;
            let total = fine.area() as u64;
            let pct = if total == 0 { 0.0 } else { hidden as f64 / total as f64 };
            let occluder_ids: Vec<String> = it.occluders.iter().map(|o| o.id.clone()).collect();
            let meta = MetaJson { id: it.id.clone(), category: it.category.clone(), caption: Some(ann.caption.clone()), occluder_ids: occluder_ids.clone(), occlusion_pct: pct };
            write(&meta_f, &serde_json::to_vec_pretty(&meta).expect("meta serializes"))?;
            records.push(ManifestRecord {
                id: it.id.clone(),
                scene: it.scene.clone(),
                status: RecordStatus::Occluded,
                width: fine.width(),
                height: fine.height(),
                modal: modal_f,
                image: Some(image_f),
                amodal: Some(amodal_f),
                meta: Some(meta_f),
                category: it.category.clone(),
                caption: Some(ann.caption.clone()),
                occluder_ids,
                occlusion_pct: pct,
                amodal_area: total,
                hidden_area: hidden,
                amodal_side: fine.bbox().map_or(0, |b| b.max_side()),
            });
        }
        let manifest = Manifest { dir: dir.to_path_buf(), records };
        manifest.write()?;
        let stats = statistics(&manifest);
        write("stats.json", &serde_json::to_vec_pretty(&stats).expect("stats serialize"))?;
        Ok(ExportSummary { dir: dir.to_path_buf(), pairs: manifest.records.len(), ids: manifest.records.iter().map(|r| r.id.clone()).collect(), stats })
    }

    pub fn stats(&self) -> ServiceStats {
        // writer before items, the same order commit uses
        let events = self.writer.lock().next_seq() - 1;
        let items = self.items.read();
        let mut by_state: BTreeMap<String, usize> = ItemState::ALL.iter().map(|s| (s.name().to_string(), 0)).collect();
        for it in items.values() {
            *by_state.get_mut(it.state.name()).expect("all states listed") += 1;
        }
        ServiceStats { items: items.len(), by_state, flagged: items.values().filter(|i| i.flag.is_some()).count(), events }
    }
}
