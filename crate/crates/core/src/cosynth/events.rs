//! Event log: the only way item state changes.
//!
//! File layout: `events.jsonl` starts with a header line
//! `{"format":"amodal-kit/cosynth-events","version":1}` followed by one
//! [`WorkflowEvent`] per line. `snapshot.json` holds the items after event
//! `seq`; loading applies the snapshot, then every later event.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, Annotation, CosynthError, HistoryEntry, InstanceRef, ItemState, Rendered, ReviewItem, Variant};

pub const EVENT_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "amodal-kit/cosynth-events";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Human(String),
    System,
}

impl std::fmt::Display for Actor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Actor::Human(n) => write!(f, "human:{n}"),
            Actor::System => f.write_str("system"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Transition {
    Enqueued { scene: String, image: String, modal: String, category: Option<String>, occlusion_pct: f64, occluders: Vec<InstanceRef>, scene_instances: Vec<InstanceRef> },
    InitialCompleted { backend: String, result: Rendered, steps: usize },
    /// `exhausted` once the retry budget is spent; the item stays pending
    /// and is flagged for a human.
    InitialFailed { backend: String, attempt: u32, error: String, exhausted: bool },
    VariantsProduced { refiner: String, variants: Vec<Variant> },
    /// Variants finished before the failure are kept here only.
    RefineFailed { refiner: String, error: String, partial: Vec<Variant> },
    MarkedUnoccluded,
    MarkedFailed { reason: Option<String> },
    Selected { variant: String },
    /// Results computed under the old order are discarded.
    OrderCorrected { edges: Vec<(String, String)>, occluders: Vec<InstanceRef> },
    Annotated { annotator: String, annotation: Annotation },
    AnnotationFlagged { annotator: String, reason: String, iou: Option<f64> },
    AnnotateFailed { annotator: String, error: String },
}

impl Transition {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Enqueued { .. } => "enqueued",
            Self::InitialCompleted { .. } => "initial_completed",
            Self::InitialFailed { .. } => "initial_failed",
            Self::VariantsProduced { .. } => "variants_produced",
            Self::RefineFailed { .. } => "refine_failed",
            Self::MarkedUnoccluded => "marked_unoccluded",
            Self::MarkedFailed { .. } => "marked_failed",
            Self::Selected { .. } => "selected",
            Self::OrderCorrected { .. } => "order_corrected",
            Self::Annotated { .. } => "annotated",
            Self::AnnotationFlagged { .. } => "annotation_flagged",
            Self::AnnotateFailed { .. } => "annotate_failed",
        }
    }

    fn describe(&self) -> String {
        match self {
            Self::InitialFailed { attempt, error, .. } => format!("initial_failed (attempt {attempt}): {error}"),
            Self::RefineFailed { error, partial, .. } => format!("refine_failed after {} variants: {error}", partial.len()),
            Self::MarkedFailed { reason: Some(r) } => format!("marked_failed: {r}"),
            Self::Selected { variant } => format!("selected {variant}"),
            Self::AnnotationFlagged { reason, .. } => format!("annotation_flagged: {reason}"),
            Self::AnnotateFailed { error, .. } => format!("annotate_failed: {error}"),
            Self::OrderCorrected { occluders, .. } => {
                format!("order_corrected: [{}]", occluders.iter().map(|o| o.id.as_str()).collect::<Vec<_>>().join(", "))
            }
            t => t.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEvent {
    pub seq: u64,
    pub item: String,
    pub actor: Actor,
    pub timestamp_ms: u64,
    pub transition: Transition,
}

fn illegal(item: &ReviewItem, t: &Transition) -> CosynthError {
    CosynthError::IllegalTransition { id: item.id.clone(), state: item.state, action: t.name().into() }
}

/// Applies one event. Fails without touching `items` if the transition is
/// not legal from the item's current state.
pub fn apply(items: &mut BTreeMap<String, ReviewItem>, ev: &WorkflowEvent) -> Result<(), CosynthError> {
    use ItemState::*;
    let t = &ev.transition;
    if let Transition::Enqueued { scene, image, modal, category, occlusion_pct, occluders, scene_instances } = t {
        if items.contains_key(&ev.item) {
            return Err(CosynthError::Log(format!("item {} enqueued twice", ev.item)));
        }
        let item = ReviewItem {
            id: ev.item.clone(),
            scene: scene.clone(),
            version: 0,
            state: Pending,
            image: image.clone(),
            modal: modal.clone(),
            category: category.clone(),
            occlusion_pct: *occlusion_pct,
            occluders: occluders.clone(),
            scene_instances: scene_instances.clone(),
            initial: None,
            variants: vec![],
            selection: None,
            annotation: None,
            flag: None,
            failed_attempts: 0,
            history: vec![],
        };
        items.insert(ev.item.clone(), item);
    } else {
        let cur = items.get(&ev.item).ok_or_else(|| CosynthError::UnknownItem(ev.item.clone()))?;
        let mut it = cur.clone();
        match (cur.state, t) {
            (Pending, Transition::InitialCompleted { result, .. }) => {
                it.state = Initial;
                it.initial = Some(result.clone());
                it.flag = None;
            }
            (Pending, Transition::InitialFailed { exhausted, .. }) => {
                it.failed_attempts += 1;
                if *exhausted {
                    it.flag = Some("initial completion failed; retries exhausted".into());
                }
            }
            (Initial, Transition::VariantsProduced { variants, .. }) if !variants.is_empty() => {
                it.state = VariantsReady;
                it.variants = variants.clone();
            }
            (Initial, Transition::RefineFailed { .. }) => {}
            (Pending, Transition::MarkedUnoccluded) => it.state = Unoccluded,
            (Pending | Initial | VariantsReady, Transition::MarkedFailed { .. }) => it.state = Failed,
            (VariantsReady, Transition::Selected { variant }) => {
                if !it.variants.iter().any(|v| &v.id == variant) {
                    return Err(CosynthError::UnknownVariant(variant.clone()));
                }
                it.state = Selected;
                it.selection = Some(variant.clone());
            }
            (s, Transition::OrderCorrected { occluders, .. }) if s != Annotated => {
                it.state = Pending;
                it.occluders = occluders.clone();
                it.initial = None;
                it.variants.clear();
                it.selection = None;
                it.flag = None;
                it.failed_attempts = 0;
            }
            (Selected, Transition::Annotated { annotation, .. }) => {
                it.state = Annotated;
                it.annotation = Some(annotation.clone());
                it.flag = None;
            }
            (Selected, Transition::AnnotationFlagged { reason, .. }) => it.flag = Some(reason.clone()),
            (Selected, Transition::AnnotateFailed { .. }) => {}
            _ => return Err(illegal(cur, t)),
        }
        items.insert(ev.item.clone(), it);
    }
    let it = items.get_mut(&ev.item).expect("just inserted");
    it.version += 1;
    it.history.push(HistoryEntry { seq: ev.seq, actor: ev.actor.clone(), timestamp_ms: ev.timestamp_ms, what: t.describe() });
    Ok(())
}

pub fn replay<'a>(events: impl IntoIterator<Item = &'a WorkflowEvent>) -> Result<BTreeMap<String, ReviewItem>, CosynthError> {
    let mut items = BTreeMap::new();
    for ev in events {
        apply(&mut items, ev)?;
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    /// Last event folded into `items`.
    pub seq: u64,
    pub items: BTreeMap<String, ReviewItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Append-only log, mirrored in memory.
#[derive(Debug, Default)]
pub struct EventLog {
    path: Option<PathBuf>,
    events: Vec<WorkflowEvent>,
}

impl EventLog {
    pub fn memory() -> Self {
        Self::default()
    }

    /// Opens or creates `path`, reading any events already there.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CosynthError> {
        let path = path.into();
        let events = if path.exists() { Self::read(&path)? } else { vec![] };
        if !path.exists() {
            let header = serde_json::to_string(&Header { format: FORMAT_NAME.into(), version: EVENT_FORMAT_VERSION }).expect("header serializes");
            std::fs::write(&path, header + "\n").map_err(io_err(&path))?;
        }
        Ok(Self { path: Some(path), events })
    }

    pub fn read(path: &Path) -> Result<Vec<WorkflowEvent>, CosynthError> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        let mut lines = std::io::BufReader::new(f).lines();
        let first = lines.next().transpose().map_err(io_err(path))?.ok_or_else(|| CosynthError::Log("missing header".into()))?;
        let h: Header = serde_json::from_str(&first).map_err(|e| CosynthError::Log(format!("bad header: {e}")))?;
        if h.format != FORMAT_NAME || h.version != EVENT_FORMAT_VERSION {
            return Err(CosynthError::Log(format!("unsupported log {} v{}", h.format, h.version)));
        }
        let mut out = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| CosynthError::Log(format!("line {}: {e}", i + 2)))?);
        }
        Ok(out)
    }

    pub fn append(&mut self, ev: WorkflowEvent) -> Result<(), CosynthError> {
        if let Some(path) = &self.path {
            let mut f = std::fs::OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
            let line = serde_json::to_string(&ev).expect("event serializes");
            writeln!(f, "{line}").map_err(io_err(path))?;
            f.flush().map_err(io_err(path))?;
        }
        self.events.push(ev);
        Ok(())
    }

    pub fn events(&self) -> &[WorkflowEvent] {
        &self.events
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }
}

pub(crate) fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<(), CosynthError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(snap).expect("snapshot serializes")).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub(crate) fn read_snapshot(path: &Path) -> Result<Option<Snapshot>, CosynthError> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let s: Snapshot = serde_json::from_slice(&bytes).map_err(|e| CosynthError::Log(format!("snapshot: {e}")))?;
    if s.format_version != EVENT_FORMAT_VERSION {
        return Err(CosynthError::Log(format!("unsupported snapshot v{}", s.format_version)));
    }
    Ok(Some(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(seq: u64, item: &str, t: Transition) -> WorkflowEvent {
        WorkflowEvent { seq, item: item.into(), actor: Actor::System, timestamp_ms: seq * 10, transition: t }
    }

    fn enq() -> Transition {
        Transition::Enqueued { scene: "s".into(), image: "i".into(), modal: "m".into(), category: None, occlusion_pct: 0.3, occluders: vec![], scene_instances: vec![] }
    }

    fn variant(id: &str) -> Variant {
        Variant { id: id.into(), seed: 0, strength: 0.5, rgba: "r".into(), mask: "m".into() }
    }

    #[test]
    fn guards_follow_state_machine() {
        let mut items = BTreeMap::new();
        apply(&mut items, &ev(1, "a", enq())).unwrap();
        assert!(apply(&mut items, &ev(2, "a", Transition::Selected { variant: "v".into() })).is_err());
        apply(&mut items, &ev(2, "a", Transition::InitialCompleted { backend: "o".into(), result: Rendered { rgba: "r".into(), mask: "m".into() }, steps: 1 })).unwrap();
        assert!(apply(&mut items, &ev(3, "a", Transition::MarkedUnoccluded)).is_err());
        assert!(apply(&mut items, &ev(3, "a", Transition::VariantsProduced { refiner: "r".into(), variants: vec![] })).is_err());
        apply(&mut items, &ev(3, "a", Transition::VariantsProduced { refiner: "r".into(), variants: vec![variant("v0"), variant("v1")] })).unwrap();
        assert!(matches!(apply(&mut items, &ev(4, "a", Transition::Selected { variant: "nope".into() })), Err(CosynthError::UnknownVariant(_))));
        apply(&mut items, &ev(4, "a", Transition::Selected { variant: "v1".into() })).unwrap();
        let e = apply(&mut items, &ev(5, "a", Transition::MarkedUnoccluded)).unwrap_err();
        assert!(e.to_string().contains("selected"), "{e}");
        let it = &items["a"];
        assert_eq!((it.state, it.version, it.history.len()), (ItemState::Selected, 4, 4));
        // order correction from selected discards everything downstream
        apply(&mut items, &ev(5, "a", Transition::OrderCorrected { edges: vec![], occluders: vec![] })).unwrap();
        let it = &items["a"];
        assert_eq!(it.state, ItemState::Pending);
        assert!(it.variants.is_empty() && it.initial.is_none() && it.selection.is_none());
    }

    #[test]
    fn log_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.jsonl");
        let mut log = EventLog::open(&p).unwrap();
        log.append(ev(1, "a", enq())).unwrap();
        log.append(ev(2, "a", Transition::MarkedFailed { reason: Some("blurry".into()) })).unwrap();
        let again = EventLog::open(&p).unwrap();
        assert_eq!(again.events(), log.events());
        assert_eq!(again.next_seq(), 3);
        let items = replay(again.events()).unwrap();
        assert_eq!(items["a"].state, ItemState::Failed);
        assert_eq!(items["a"].history[1].what, "marked_failed: blurry");
        std::fs::write(&p, "{\"format\":\"other\",\"version\":1}\n").unwrap();
        assert!(EventLog::read(&p).is_err());
    }
}
