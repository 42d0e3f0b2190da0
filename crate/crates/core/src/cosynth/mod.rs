//! Review queue for curating deocclusion pairs: filter, initial stepwise
//! completion, variant refinement, human selection, annotation and export.
//!
//! Every mutation is a [`WorkflowEvent`] appended to a JSONL log; item
//! state is whatever replaying that log produces. Images live in a
//! content-addressed blob store and items refer to them by sha256.
//!
//! ```text
//! pending ──> unoccluded | failed | initial
//! initial ──> variants_ready | failed
//! variants_ready ──> selected | failed
//! selected ──> annotated
//! any but annotated ──(order corrected)──> pending
//! ```

mod api;
mod events;
mod store;
mod workflow;

pub use api::{router, ApiContext, ItemSummary};
pub use events::{apply, replay, Actor, EventLog, Snapshot, Transition, WorkflowEvent, EVENT_FORMAT_VERSION};
pub use store::BlobStore;
pub use workflow::{Annotator, CosynthService, Decision, ExportSummary, IdentityRefiner, ServiceConfig, ServiceStats, StubAnnotator, STRENGTHS};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemState {
    Pending,
    Unoccluded,
    Failed,
    Initial,
    VariantsReady,
    Selected,
    Annotated,
}

impl ItemState {
    pub const ALL: [ItemState; 7] = [Self::Pending, Self::Unoccluded, Self::Failed, Self::Initial, Self::VariantsReady, Self::Selected, Self::Annotated];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Unoccluded => "unoccluded",
            Self::Failed => "failed",
            Self::Initial => "initial",
            Self::VariantsReady => "variants_ready",
            Self::Selected => "selected",
            Self::Annotated => "annotated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// States that carry variants.
    pub fn has_variants(self) -> bool {
        matches!(self, Self::VariantsReady | Self::Selected | Self::Annotated)
    }
}

impl std::fmt::Display for ItemState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An image in the blob store: RGBA PNG plus its amodal mask PNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rendered {
    pub rgba: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub id: String,
    pub seed: u64,
    pub strength: f64,
    pub rgba: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub caption: String,
    pub fine_mask: String,
    /// Against the selected variant's mask.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub id: String,
    pub modal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub actor: Actor,
    pub timestamp_ms: u64,
    pub what: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub scene: String,
    /// Bumped by every event touching the item.
    pub version: u64,
    pub state: ItemState,
    pub image: String,
    pub modal: String,
    pub category: Option<String>,
    pub occlusion_pct: f64,
    /// Removal order, nearest first.
    pub occluders: Vec<InstanceRef>,
    /// Every other instance of the scene; order corrections pick from these.
    pub scene_instances: Vec<InstanceRef>,
    pub initial: Option<Rendered>,
    pub variants: Vec<Variant>,
    pub selection: Option<String>,
    pub annotation: Option<Annotation>,
    /// Reason an item needs a human look without changing state.
    pub flag: Option<String>,
    pub failed_attempts: u32,
    pub history: Vec<HistoryEntry>,
}

impl ReviewItem {
    pub fn selected_variant(&self) -> Option<&Variant> {
        let id = self.selection.as_ref()?;
        self.variants.iter().find(|v| &v.id == id)
    }

    /// sha256 over the item's canonical JSON.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("item serializes")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CosynthError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("item {id} is {state}; {action} is not allowed")]
    IllegalTransition { id: String, state: ItemState, action: String },
    #[error("item {id} is at version {current}, request was for {expected}")]
    Conflict { id: String, expected: u64, current: u64 },
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("unknown blob {0}")]
    UnknownBlob(String),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("{0}")]
    Precondition(String),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("event log: {0}")]
    Log(String),
    #[error(transparent)]
    Mask(#[from] crate::mask::MaskError),
    #[error(transparent)]
    Dataset(#[from] crate::scene::DatasetError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CosynthError + '_ {
    move |source| CosynthError::Io { path: path.display().to_string(), source }
}
