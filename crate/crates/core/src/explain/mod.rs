//! Explainability: perturbation test, pointing game and attention export.

mod export;
mod perturb;
mod pointing;

pub use export::{bilinear_upsample, encode_pgm, export_attention, ExportedFiles};
pub use perturb::{
    noise_masks, perturb_features, perturbation_test, relevance_mask, trial_rng, tvd, AttentionPredictor, CurvePoint,
    PerturbConfig, PerturbCurve, Target,
};
pub use pointing::{pointing_game, pointing_mae, PointingMode, PointingReport};
