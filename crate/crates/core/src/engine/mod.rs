//! Training-sample construction, stepwise (one occluder at a time)
//! inference, one-shot completion and the two-pass global-to-local
//! strategy, all over a pluggable [`CompletionBackend`].

mod backend;
mod infer;
pub mod remote;
mod sample;
mod toy;

pub(crate) use backend::call_full;
pub use backend::{BackendError, Capabilities, Completion, CompletionBackend, FullRequest, HeuristicBackend, OracleBackend, PartialRequest};
pub use infer::{
    infer_full, infer_global_to_local, infer_stepwise, infer_stepwise_seeded, DeoccState, StepRecord, StepwiseError, StepwiseResult, TwoPassConfig,
    TwoPassResult, Variation,
};
pub use sample::{
    candidate_regions, construct_sample, construct_sample_multi, construct_sample_naive, contaminated_pixels, sample_generated, sources_from_scene,
    SampleSource, TrainingSample,
};
pub use toy::{full_example, partial_example, ToyDiffusionBackend};

use crate::graph::GraphError;
use crate::mask::MaskError;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("instance is fully occluded; there is no visible part to start from")]
    FullyOccluded,
    #[error("backend {backend} lacks the {capability} capability")]
    Unsupported { backend: String, capability: &'static str },
    #[error("backend {backend} failed: {message}")]
    Backend { backend: String, message: String },
    #[error("backend {backend} broke its contract: {detail}")]
    ContractViolation { backend: String, detail: String },
}
