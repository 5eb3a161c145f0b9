//! Temporal pointing game: how well the time attention matches annotated
//! event segments.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StanError};
use crate::io::ClipRecord;
use crate::model::Stan;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointingMode {
    /// Compare raw attention values.
    Soft,
    /// Binarize attention at 0.5 first.
    Binary,
}

/// `(1/T) sum_t |a_t - g_t|`.
pub fn pointing_mae(attention: &[f64], grounding: &[u8], mode: PointingMode) -> Result<f64> {
    if attention.len() != grounding.len() || attention.is_empty() {
        return Err(StanError::dim("pointing_mae", &[attention.len()], &[grounding.len()]));
    }
    let sum: f64 = attention
        .iter()
        .zip(grounding)
        .map(|(&a, &g)| {
            let a = match mode {
                PointingMode::Soft => a,
                PointingMode::Binary => (a >= 0.5) as u8 as f64,
            };
            (a - g as f64).abs()
        })
        .sum();
    Ok(sum / attention.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointingReport {
    pub soft_mae: f64,
    pub binary_mae: f64,
    /// MAE of a constant 0.5 attention.
    pub baseline_mae: f64,
    pub clips: usize,
}

/// Mean pointing error of the model's time attention over every clip that
/// carries temporal grounding.
pub fn pointing_game<T: Real>(model: &Stan<T>, clips: &[ClipRecord]) -> Result<PointingReport> {
    let mut soft = 0.0;
    let mut binary = 0.0;
    let mut baseline = 0.0;
    let mut n = 0usize;
    for c in clips {
        let Some(g) = &c.grounding else { continue };
        let a = model.forward(c)?.attention.time.to_f64_vec();
        soft += pointing_mae(&a, g, PointingMode::Soft)?;
        binary += pointing_mae(&a, g, PointingMode::Binary)?;
        baseline += pointing_mae(&vec![0.5; g.len()], g, PointingMode::Soft)?;
        n += 1;
    }
    if n == 0 {
        return Err(StanError::Contract("no clip carries temporal grounding".into()));
    }
    let n_f = n as f64;
    Ok(PointingReport {
        soft_mae: soft / n_f,
        binary_mae: binary / n_f,
        baseline_mae: baseline / n_f,
        clips: n,
    })
}
