//! Space-time attention head for audio-visual event recognition.
//!
//! The crate trains a small attention network over precomputed per-second
//! audio embeddings (`T x D_a`) and visual feature maps (`T x H x W x D_v`),
//! and evaluates how faithful its space and time attention are:
//!
//! * [`tensor`]: dense tensors, the op set, a reverse-mode tape, gradient checks
//! * [`io`]: the AVTF feature container, JSON manifests, a planted-event generator
//! * [`model`]: composition, space/time attention, fusion and the three heads
//! * [`train`]: multi-label BCE, the three-term objective, Adam, the training loop
//! * [`metrics`]: top-1, instance mAP, instance F-score
//! * [`explain`]: TVD perturbation tests, pointing games, attention export
//! * [`presets`]: model and optimiser settings for the synthetic data

pub mod error;
pub mod explain;
pub mod io;
pub mod metrics;
pub mod model;
pub mod presets;
pub mod tensor;
pub mod train;

pub use error::{FormatError, Result, StanError};
pub use tensor::{ParamTensor, Real, Tensor};
