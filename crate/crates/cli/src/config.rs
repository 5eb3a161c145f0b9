//! Run configuration: file sections plus flag overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stanlab::explain::PerturbConfig;
use stanlab::io::{Dataset, SynthConfig};
use stanlab::model::{Mode, StanConfig};
use stanlab::train::TrainConfig;
use stanlab::{Result, StanError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: StanConfig,
    pub train: TrainConfig,
    pub perturb: PerturbConfig,
}

impl RunConfig {
    /// Read a TOML or JSON file, chosen by extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StanError::Config(format!("{}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if json {
            serde_json::from_str(&text).map_err(|e| StanError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| StanError::Config(format!("{}: {}", path.display(), e.message())))
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::from_file)
    }

    /// Apply `--seed` and `--mode`; flags win over file values.
    pub fn apply_flags(&mut self, seed: Option<u64>, mode: Option<Mode>) {
        if let Some(s) = seed {
            self.synth.seed = s;
            self.model.init_seed = s;
            self.train.seed = s;
            self.perturb.seed = s;
        }
        if let Some(m) = mode {
            self.model.mode = m;
        }
    }

    /// Worker count from `STANLAB_THREADS`, when set.
    pub fn apply_thread_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| StanError::Config(format!("STANLAB_THREADS must be a positive integer, got {v:?}")))?;
            self.train.threads = n;
        }
        Ok(())
    }

    /// Take the feature extents and class count from the data.
    pub fn infer_extents(&mut self, data: &Dataset) -> Result<()> {
        let clip = data
            .splits
            .values()
            .flatten()
            .next()
            .ok_or_else(|| StanError::Config("dataset has no clips".into()))?;
        let (a, v) = (clip.audio.shape(), clip.visual.shape());
        let m = &mut self.model;
        m.k = data.manifest.k;
        m.t = a[0];
        m.d_a = a[1];
        m.h = v[1];
        m.w = v[2];
        m.d_v = v[3];
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises to TOML")
    }
}
