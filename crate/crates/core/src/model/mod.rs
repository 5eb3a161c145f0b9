//! The space-time attention head.

pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::{Mode, StanConfig};
pub use forward::{AttentionBundle, ForwardOutput, Stan, StanGraph};
pub use params::{Affine, BoundAffine, BoundMlp, Mlp, StanParams};
