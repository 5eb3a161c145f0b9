use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ForwardOutput, StanGraph};
use crate::tensor::{ops, Real, Tape, Tensor, Var};

static CLAMP_WARNINGS: AtomicUsize = AtomicUsize::new(0);

/// Number of probabilities clamped to `[1e-7, 1 - 1e-7]` by
/// [`bce_multilabel`] since process start.
pub fn clamp_warnings() -> usize {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

/// `-(1/K) sum_j [y_j log p_j + (1 - y_j) log(1 - p_j)]`.
///
/// Probabilities at exactly 0 or 1 are clamped and counted in
/// [`clamp_warnings`].
pub fn bce_multilabel<T: Real>(p: &Tensor<T>, y: &[u8]) -> Result<f64> {
    let target: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let (loss, clamped) = ops::bce(p, &target)?;
    if clamped > 0 {
        CLAMP_WARNINGS.fetch_add(clamped, Ordering::Relaxed);
        log::warn!("bce: clamped {clamped} probabilities");
    }
    Ok(loss)
}

/// The three terms of the multi-task objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce_final: f64,
    pub bce_cam: f64,
    pub bce_cav: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(bce_final: f64, bce_cam: f64, bce_cav: f64) -> Self {
        Self {
            bce_final,
            bce_cam,
            bce_cav,
            total: bce_final + bce_cam + bce_cav,
        }
    }

    pub fn add(&mut self, other: &Self) {
        *self = Self::new(
            self.bce_final + other.bce_final,
            self.bce_cam + other.bce_cam,
            self.bce_cav + other.bce_cav,
        );
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.bce_final * s, self.bce_cam * s, self.bce_cav * s)
    }
}

/// Unweighted sum of BCE on the final, CAM and CAV heads. Without a space
/// path the CAM term is zero.
pub fn stan_loss<T: Real>(out: &ForwardOutput<T>, y: &[u8]) -> Result<LossBreakdown> {
    let fin = bce_multilabel(&out.p, y)?;
    let cam = match &out.p_cam {
        Some(p) => bce_multilabel(p, y)?,
        None => 0.0,
    };
    let cav = bce_multilabel(&out.p_cav, y)?;
    Ok(LossBreakdown::new(fin, cam, cav))
}

/// Which terms of the objective to record on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub final_head: bool,
    pub cam: bool,
    pub cav: bool,
}

impl LossTerms {
    pub const ALL: Self = Self {
        final_head: true,
        cam: true,
        cav: true,
    };
}

/// Handles of the recorded loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub bce_final: Option<Var>,
    pub bce_cam: Option<Var>,
    pub bce_cav: Option<Var>,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, tape: &Tape<T>) -> LossBreakdown {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).data()[0].as_f64());
        LossBreakdown::new(v(self.bce_final), v(self.bce_cam), v(self.bce_cav))
    }
}

/// Record the selected objective terms for `graph` on `tape`.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    graph: &StanGraph,
    y: &[u8],
    terms: LossTerms,
) -> Result<LossVars> {
    let target: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let bce_final = if terms.final_head {
        Some(tape.bce(graph.p, &target)?)
    } else {
        None
    };
    let bce_cam = match (terms.cam, graph.p_cam) {
        (true, Some(p)) => Some(tape.bce(p, &target)?),
        _ => None,
    };
    let bce_cav = if terms.cav {
        Some(tape.bce(graph.p_cav, &target)?)
    } else {
        None
    };
    let mut parts = [bce_final, bce_cam, bce_cav].into_iter().flatten();
    let mut total = match parts.next() {
        Some(first) => first,
        None => tape.input(Tensor::scalar(T::zero())),
    };
    for part in parts {
        total = tape.add(total, part)?;
    }
    Ok(LossVars {
        total,
        bce_final,
        bce_cam,
        bce_cav,
    })
}
