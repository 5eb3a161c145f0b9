use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::avtf::read_feature_file;
use crate::error::{Result, StanError};
use crate::tensor::Tensor;

/// One clip entry in a manifest. Feature paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub audio: PathBuf,
    pub visual: PathBuf,
    pub labels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<Vec<u8>>,
    /// Number of real segments before padding/truncation to `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// `[T, H, W]` mask of the planted visual block (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub k: usize,
    pub classes: Vec<String>,
    pub splits: BTreeMap<String, Vec<ClipEntry>>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != self.k {
            return Err(StanError::Config(format!(
                "manifest {}: {} class names for k={}",
                self.name,
                self.classes.len(),
                self.k
            )));
        }
        for split in ["train", "test"] {
            if !self.splits.contains_key(split) {
                return Err(StanError::Config(format!(
                    "manifest {}: missing split {split:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| StanError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| StanError::io(path, e))
    }

    pub fn find(&self, clip_id: &str) -> Option<(&str, &ClipEntry)> {
        self.splits.iter().find_map(|(split, clips)| {
            clips
                .iter()
                .find(|c| c.id == clip_id)
                .map(|c| (split.as_str(), c))
        })
    }
}

/// A loaded clip: frozen-encoder features plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub id: String,
    /// `[T, D_a]`
    pub audio: Tensor<f32>,
    /// `[T, H, W, D_v]`
    pub visual: Tensor<f32>,
    pub labels: Vec<u8>,
    pub grounding: Option<Vec<u8>>,
    pub spatial_mask: Option<Tensor<f32>>,
}

impl ClipRecord {
    pub fn new(
        id: impl Into<String>,
        audio: Tensor<f32>,
        visual: Tensor<f32>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let clip = Self {
            id: id.into(),
            audio,
            visual,
            labels,
            grounding: None,
            spatial_mask: None,
        };
        clip.validate(None)?;
        Ok(clip)
    }

    pub fn t(&self) -> usize {
        self.audio.shape()[0]
    }

    pub fn target(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }

    pub fn positives(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == 1).collect()
    }

    /// Checks the record's invariants, and the class count when given.
    pub fn validate(&self, k: Option<usize>) -> Result<()> {
        let fail = |reason: String| StanError::Load {
            clip: self.id.clone(),
            reason,
        };
        if self.audio.rank() != 2 {
            return Err(fail(format!("audio must be [T, D_a], got {:?}", self.audio.shape())));
        }
        if self.visual.rank() != 4 {
            return Err(fail(format!(
                "visual must be [T, H, W, D_v], got {:?}",
                self.visual.shape()
            )));
        }
        let t = self.audio.shape()[0];
        if self.visual.shape()[0] != t {
            return Err(fail(format!(
                "audio has T={t} but visual has T={}",
                self.visual.shape()[0]
            )));
        }
        if let Some(k) = k {
            if self.labels.len() != k {
                return Err(fail(format!("label vector has length {}, expected K={k}", self.labels.len())));
            }
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(fail("labels must be 0/1".into()));
        }
        if !self.labels.contains(&1) {
            return Err(fail("clip carries no positive label".into()));
        }
        if let Some(g) = &self.grounding {
            if g.len() != t {
                return Err(fail(format!("grounding has length {}, expected T={t}", g.len())));
            }
            if g.iter().any(|&v| v > 1) {
                return Err(fail("grounding must be 0/1".into()));
            }
        }
        if let Some(m) = &self.spatial_mask {
            let vs = self.visual.shape();
            if m.shape() != [vs[0], vs[1], vs[2]] {
                return Err(fail(format!("spatial mask shape {:?} does not match visual", m.shape())));
            }
        }
        if !self.audio.is_finite() || !self.visual.is_finite() {
            return Err(fail("non-finite feature values".into()));
        }
        Ok(())
    }
}

/// A manifest with every split loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub splits: BTreeMap<String, Vec<ClipRecord>>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[ClipRecord]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| StanError::Config(format!("dataset has no split {name:?}")))
    }
}

fn load_entry(root: &Path, entry: &ClipEntry, k: usize) -> Result<ClipRecord> {
    let read = |rel: &Path| {
        read_feature_file(root.join(rel)).map_err(|e| StanError::Load {
            clip: entry.id.clone(),
            reason: e.to_string(),
        })
    };
    let clip = ClipRecord {
        id: entry.id.clone(),
        audio: read(&entry.audio)?,
        visual: read(&entry.visual)?,
        labels: entry.labels.clone(),
        grounding: entry.grounding.clone(),
        spatial_mask: entry.spatial_mask.as_deref().map(read).transpose()?,
    };
    clip.validate(Some(k))?;
    Ok(clip)
}

/// Load every split named in the manifest at `path`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest = DatasetManifest::read(path)?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut splits = BTreeMap::new();
    for (name, entries) in &manifest.splits {
        let clips = entries
            .iter()
            .map(|e| load_entry(&root, e, manifest.k))
            .collect::<Result<Vec<_>>>()?;
        splits.insert(name.clone(), clips);
    }
    Ok(Dataset {
        manifest,
        root,
        splits,
    })
}
