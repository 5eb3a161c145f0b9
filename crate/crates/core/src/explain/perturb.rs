//! Attention-guided perturbation test.
//!
//! Gaussian noise is added to the raw features inside (or outside) the region
//! the model attends to. The prediction is recomputed with the clean
//! space-time attention held fixed and compared with the clean prediction by
//! total variation distance.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StanError};
use crate::io::ClipRecord;
use crate::model::Stan;
use crate::tensor::{Real, Tensor};

/// `0.5 * sum |p - q|`.
pub fn tvd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(StanError::dim("tvd", &[p.len()], &[q.len()]));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Which side of the attention threshold receives noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Positions with attention `>= threshold`.
    Relevant,
    /// Positions with attention `< threshold`.
    Irrelevant,
}

impl Target {
    pub const BOTH: [Target; 2] = [Target::Relevant, Target::Irrelevant];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Relevant => "relevant",
            Target::Irrelevant => "irrelevant",
        }
    }
}

/// 0/1 mask over `[T, H, W]` selecting the `target` side of `threshold`.
pub fn relevance_mask<T: Real>(a_st: &Tensor<T>, threshold: f64, target: Target) -> Tensor<T> {
    a_st.map(|a| {
        let relevant = a.as_f64() >= threshold;
        if relevant == (target == Target::Relevant) {
            T::one()
        } else {
            T::zero()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            sigmas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            trials: 100,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(StanError::Config("sigmas must be finite and non-negative".into()));
        }
        if self.trials == 0 {
            return Err(StanError::Config("trials must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sigma: f64,
    /// Mean over trials of the clip-averaged TVD.
    pub mean_tvd: f64,
    /// Population standard deviation of the clip-averaged TVD across trials.
    pub std_tvd: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbCurve {
    pub target: Target,
    pub points: Vec<CurvePoint>,
}

impl PerturbCurve {
    pub const CSV_HEADER: &'static str = "sigma,mean_tvd,std_tvd,trials";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for p in &self.points {
            writeln!(out, "{},{:.8},{:.8},{}", p.sigma, p.mean_tvd, p.std_tvd, p.trials).unwrap();
        }
        out
    }

    pub fn at(&self, sigma: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.sigma == sigma)
    }
}

/// A model that exposes a space-time attention and can re-classify
/// perturbed inputs under a fixed attention.
pub trait AttentionPredictor {
    /// Clean probabilities and space-time attention `[T, H, W]`.
    fn clean(&self, audio: &Tensor<f32>, visual: &Tensor<f32>) -> Result<(Vec<f64>, Tensor<f32>)>;

    /// Probabilities for (perturbed) inputs with `a_st` held fixed.
    fn with_attention(&self, audio: &Tensor<f32>, visual: &Tensor<f32>, a_st: &Tensor<f32>) -> Result<Vec<f64>>;
}

impl AttentionPredictor for Stan<f32> {
    fn clean(&self, audio: &Tensor<f32>, visual: &Tensor<f32>) -> Result<(Vec<f64>, Tensor<f32>)> {
        if !self.params.is_finite() {
            return Err(StanError::Contract("model parameters are not finite".into()));
        }
        let out = self.forward_features(audio, visual)?;
        Ok((out.p.to_f64_vec(), out.attention.space_time))
    }

    fn with_attention(&self, audio: &Tensor<f32>, visual: &Tensor<f32>, a_st: &Tensor<f32>) -> Result<Vec<f64>> {
        let x_st = self.compose_spacetime(audio, visual)?;
        Ok(self.classify(&x_st, a_st)?.to_f64_vec())
    }
}

/// FNV-1a, used to give every clip id a stable stream of noise.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Noise stream for one (clip, sigma, trial).
pub fn trial_rng(seed: u64, clip_id: &str, sigma_index: usize, trial: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stable_hash(clip_id).to_le_bytes());
    key[16..24].copy_from_slice(&(sigma_index as u64).to_le_bytes());
    key[24..].copy_from_slice(&(trial as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Per-step audio mask `[T]` and per-position visual mask `[T, H, W]` for a
/// space-time attention `[T, H, W]`.
///
/// The audio mask is the visual mask reduced over `(h, w)` by max: a step
/// gets audio noise when any of its positions is selected.
pub fn noise_masks<T: Real>(a_st: &Tensor<T>, threshold: f64, target: Target) -> Result<(Vec<f64>, Tensor<T>)> {
    if a_st.rank() != 3 {
        return Err(StanError::dim("noise_masks", a_st.shape(), &[0, 0, 0]));
    }
    let mask = relevance_mask(a_st, threshold, target);
    let plane = a_st.shape()[1] * a_st.shape()[2];
    let audio = mask
        .data()
        .chunks(plane.max(1))
        .map(|step| step.iter().any(|&m| m == T::one()) as u8 as f64)
        .collect();
    Ok((audio, mask))
}

/// Add `sigma * N(0, 1)` to audio `[T, D_a]` at steps where `audio_mask` is 1
/// and to visual `[T, H, W, D_v]` at positions where `visual_mask` is 1.
pub fn perturb_features(
    audio: &Tensor<f32>,
    visual: &Tensor<f32>,
    audio_mask: &[f64],
    visual_mask: &Tensor<f32>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let ms = visual_mask.shape();
    let vs = visual.shape();
    if ms.len() != 3 || vs.len() != 4 || vs[..3] != ms[..] || audio.shape()[0] != audio_mask.len() {
        return Err(StanError::dim("perturb_features", ms, vs));
    }

    let mut a = audio.clone();
    let da = audio.channels();
    for (row, &on) in a.data_mut().chunks_mut(da).zip(audio_mask) {
        for x in row {
            let n: f64 = StandardNormal.sample(rng);
            *x = (*x as f64 + sigma * n * on) as f32;
        }
    }

    let mut v = visual.clone();
    let dv = visual.channels();
    for (cell, &on) in v.data_mut().chunks_mut(dv).zip(visual_mask.data()) {
        for x in cell {
            let n: f64 = StandardNormal.sample(rng);
            *x = (*x as f64 + sigma * n * on as f64) as f32;
        }
    }
    Ok((a, v))
}

/// Perturbation curve of `model` over `clips` for one target region.
pub fn perturbation_test<M: AttentionPredictor + ?Sized>(
    model: &M,
    clips: &[ClipRecord],
    cfg: &PerturbConfig,
    target: Target,
) -> Result<PerturbCurve> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(StanError::Contract("perturbation test needs at least one clip".into()));
    }
    let mut clean = Vec::with_capacity(clips.len());
    for c in clips {
        let (p, a_st) = model.clean(&c.audio, &c.visual)?;
        let (audio_mask, visual_mask) = noise_masks(&a_st, cfg.threshold, target)?;
        clean.push((p, a_st, audio_mask, visual_mask));
    }

    let mut points = Vec::with_capacity(cfg.sigmas.len());
    for (si, &sigma) in cfg.sigmas.iter().enumerate() {
        let mut per_trial = Vec::with_capacity(cfg.trials);
        for trial in 0..cfg.trials {
            let mut sum = 0.0;
            for (c, (p, a_st, audio_mask, visual_mask)) in clips.iter().zip(&clean) {
                let mut rng = trial_rng(cfg.seed, &c.id, si, trial);
                let (a, v) = perturb_features(&c.audio, &c.visual, audio_mask, visual_mask, sigma, &mut rng)?;
                let q = model.with_attention(&a, &v, a_st)?;
                sum += tvd(p, &q)?;
            }
            per_trial.push(sum / clips.len() as f64);
        }
        let n = per_trial.len() as f64;
        let mean = per_trial.iter().sum::<f64>() / n;
        let var = per_trial.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        points.push(CurvePoint {
            sigma,
            mean_tvd: mean,
            std_tvd: var.sqrt(),
            trials: cfg.trials,
        });
    }
    Ok(PerturbCurve { target, points })
}
