//! Amodal completion toolkit.
//!
//! - [`mask`]: binary masks, RGBA buffers, crop geometry and PNG codecs
//! - [`graph`]: instances and occlusion order
//! - [`scene`]: layered synthetic scenes with exact amodal ground truth
//! - [`engine`]: training-sample construction and stepwise / full inference
//! - [`diffusion`]: schedules, DDIM, losses with analytic gradients, toy denoiser
//! - [`eval`]: mIoU, best-of-k, occlusion bins and a Fréchet-distance proxy
//! - [`cosynth`]: the review-queue workflow and its HTTP API
//! - [`cli`]: run configuration and the command implementations behind the binary

pub mod cli;
pub mod cosynth;
pub mod diffusion;
pub mod engine;
pub mod eval;
pub mod graph;
pub mod mask;
pub mod scene;
pub mod seed;
