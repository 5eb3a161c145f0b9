use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StanError};

/// Which modalities the head sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Audio only; time attention only, no space path.
    #[serde(rename = "audio")]
    Audio,
    /// Visual only; space and time attention over visual features.
    #[serde(rename = "visual")]
    Visual,
    #[serde(rename = "audio-visual")]
    AudioVisual,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Audio, Mode::Visual, Mode::AudioVisual];

    pub fn uses_audio(self) -> bool {
        self != Mode::Visual
    }

    pub fn uses_visual(self) -> bool {
        self != Mode::Audio
    }

    pub fn has_space_path(self) -> bool {
        self.uses_visual()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Audio => "audio",
            Mode::Visual => "visual",
            Mode::AudioVisual => "audio-visual",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = StanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Mode::Audio),
            "visual" => Ok(Mode::Visual),
            "audio-visual" | "av" => Ok(Mode::AudioVisual),
            other => Err(StanError::Config(format!(
                "unknown mode {other:?} (expected audio, visual or audio-visual)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StanConfig {
    pub k: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub d_a: usize,
    pub d_v: usize,
    /// Shared embedding width of each projected modality.
    pub d: usize,
    pub mode: Mode,
    /// Side of the space-gate convolution (CAM -> 1 channel).
    pub gate_kernel: usize,
    /// Side of the visual projection convolution.
    pub visual_kernel: usize,
    /// Side of the CAM convolution.
    pub cam_kernel: usize,
    /// Insert a width-`d` ReLU hidden layer in the audio/visual projection MLPs.
    pub mlp_hidden: bool,
    /// Give the space path its own projection weights instead of reusing
    /// the classifier-path composition.
    pub separate_space_features: bool,
    /// Start the time gate with zero weights and this bias, so every step
    /// begins at the same attention `sigmoid(bias)`. Random init when unset.
    pub time_gate_bias_init: Option<f64>,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl Default for StanConfig {
    fn default() -> Self {
        Self {
            k: 28,
            t: 10,
            h: 7,
            w: 7,
            d_a: 128,
            d_v: 2048,
            d: 256,
            mode: Mode::AudioVisual,
            gate_kernel: 3,
            visual_kernel: 1,
            cam_kernel: 1,
            mlp_hidden: false,
            separate_space_features: false,
            time_gate_bias_init: None,
            init_seed: 0,
        }
    }
}

impl StanConfig {
    /// Width of the composed space-time feature.
    pub fn d_prime(&self) -> usize {
        match self.mode {
            Mode::AudioVisual => 2 * self.d,
            Mode::Audio | Mode::Visual => self.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("t", self.t),
            ("h", self.h),
            ("w", self.w),
            ("d_a", self.d_a),
            ("d_v", self.d_v),
            ("d", self.d),
        ] {
            if v == 0 {
                return Err(StanError::Config(format!("model: {name} must be >= 1")));
            }
        }
        if self.time_gate_bias_init.is_some_and(|b| !b.is_finite()) {
            return Err(StanError::Config("model: time_gate_bias_init must be finite".into()));
        }
        for (name, k) in [
            ("gate_kernel", self.gate_kernel),
            ("visual_kernel", self.visual_kernel),
            ("cam_kernel", self.cam_kernel),
        ] {
            if k % 2 == 0 {
                return Err(StanError::Config(format!("model: {name} must be odd, got {k}")));
            }
        }
        Ok(())
    }

    /// Check that a clip's feature shapes match this configuration.
    pub fn check_inputs(&self, audio: &[usize], visual: &[usize]) -> Result<()> {
        if self.mode.uses_audio() && audio != [self.t, self.d_a] {
            return Err(StanError::Config(format!(
                "{} mode expects audio [{}, {}], got {audio:?}",
                self.mode, self.t, self.d_a
            )));
        }
        if self.mode.uses_visual() && visual != [self.t, self.h, self.w, self.d_v] {
            return Err(StanError::Config(format!(
                "{} mode expects visual [{}, {}, {}, {}], got {visual:?}",
                self.mode, self.t, self.h, self.w, self.d_v
            )));
        }
        Ok(())
    }
}
