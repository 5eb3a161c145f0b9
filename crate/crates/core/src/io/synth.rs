//! Planted-event clips with known temporal and spatial ground truth.
//!
//! Each class owns one audio pattern and one visual pattern. A clip of class
//! `k` gets the audio pattern added to every step of a random contiguous
//! window `[t0, t1)` and the visual pattern added to a random square block
//! during the same window. All features carry i.i.d. Gaussian noise with
//! standard deviation `signal_rms / snr`.
//!
//! Classes `2j` and `2j+1` share part of their audio pattern, while classes
//! `j` and `j + k/2` share part of their visual pattern. A small fraction of
//! events is silent (visual pattern only) or off-screen (audio pattern
//! only), so each modality alone misses some clips that the other one
//! resolves. The grounding window is recorded either way.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::avtf::write_feature_file;
use super::manifest::{ClipEntry, ClipRecord, DatasetManifest};
use crate::error::{Result, StanError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub k: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub d_a: usize,
    pub d_v: usize,
    pub clips_per_class: usize,
    /// Noise standard deviation is `signal_rms / snr`; `f64::INFINITY` disables noise.
    pub snr: f64,
    pub seed: u64,
    /// Planted window lengths are uniform over `min_window..=max_window`.
    pub min_window: usize,
    pub max_window: usize,
    /// Planted square block sides are uniform over `min_block..=max_block`.
    pub min_block: usize,
    pub max_block: usize,
    /// Per-element RMS of every class pattern. Noise scales with it.
    pub signal_rms: f64,
    /// Squared cosine shared between the patterns of paired classes.
    pub pair_overlap: f64,
    /// Probability that an event is visible but silent (no audio pattern).
    pub audio_dropout: f64,
    /// Probability that an event is audible but off-screen (no visual pattern).
    pub visual_dropout: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: 4,
            t: 10,
            h: 7,
            w: 7,
            d_a: 16,
            d_v: 16,
            clips_per_class: 50,
            snr: 10.0,
            seed: 0,
            min_window: 1,
            max_window: 3,
            min_block: 4,
            max_block: 6,
            signal_rms: 1.0,
            pair_overlap: 0.5,
            audio_dropout: 0.03,
            visual_dropout: 0.05,
            train_fraction: 0.6,
            val_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(StanError::Config(m));
        for (name, v) in [
            ("k", self.k),
            ("t", self.t),
            ("h", self.h),
            ("w", self.w),
            ("d_a", self.d_a),
            ("d_v", self.d_v),
            ("clips_per_class", self.clips_per_class),
            ("min_window", self.min_window),
            ("min_block", self.min_block),
        ] {
            if v == 0 {
                return err(format!("synth: {name} must be >= 1"));
            }
        }
        if !(self.signal_rms > 0.0 && self.signal_rms.is_finite()) {
            return err(format!("synth: signal_rms must be positive, got {}", self.signal_rms));
        }
        if self.snr.is_nan() || self.snr <= 0.0 {
            return err(format!("synth: snr must be > 0, got {}", self.snr));
        }
        if self.max_window > self.t || self.min_window > self.max_window {
            return err(format!(
                "synth: window lengths {}..={} do not fit T={}",
                self.min_window, self.max_window, self.t
            ));
        }
        if self.max_block > self.h.min(self.w) || self.min_block > self.max_block {
            return err(format!(
                "synth: block sides {}..={} do not fit {}x{}",
                self.min_block, self.max_block, self.h, self.w
            ));
        }
        if !(0.0..1.0).contains(&self.pair_overlap) {
            return err(format!("synth: pair_overlap must be in [0, 1), got {}", self.pair_overlap));
        }
        let drop_ok = |p: f64| (0.0..1.0).contains(&p);
        if !drop_ok(self.audio_dropout) || !drop_ok(self.visual_dropout) || self.audio_dropout + self.visual_dropout >= 1.0 {
            return err("synth: modality dropout probabilities must lie in [0, 1) and sum below 1".into());
        }
        if self.train_fraction <= 0.0 || self.val_fraction < 0.0 || self.train_fraction + self.val_fraction >= 1.0 {
            return err("synth: split fractions must leave a non-empty test split".into());
        }
        Ok(())
    }

    fn noise_std(&self) -> f64 {
        if self.snr.is_infinite() {
            0.0
        } else {
            self.signal_rms / self.snr
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.k).map(|i| format!("event_{i}")).collect()
    }
}

/// Ground truth of one planted event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedEvent {
    pub class: usize,
    pub t0: usize,
    pub t1: usize,
    /// Top-left corner and side of the planted square.
    pub row: usize,
    pub col: usize,
    pub side: usize,
    /// Whether the audio pattern was injected.
    pub audible: bool,
    /// Whether the visual pattern was injected.
    pub visible: bool,
}

fn unit_rms(v: Vec<f64>) -> Vec<f64> {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    v.into_iter().map(|x| x / rms).collect()
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `sqrt(overlap) * shared[group] + sqrt(1 - overlap) * own`, rescaled to unit RMS.
fn paired_patterns(
    k: usize,
    dim: usize,
    overlap: f64,
    group: impl Fn(usize) -> usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let shared: Vec<Vec<f64>> = (0..k).map(|_| gaussian(dim, rng)).collect();
    (0..k)
        .map(|c| {
            let own = gaussian(dim, rng);
            let mix = shared[group(c)]
                .iter()
                .zip(&own)
                .map(|(s, o)| overlap.sqrt() * s + (1.0 - overlap).sqrt() * o)
                .collect();
            unit_rms(mix)
        })
        .collect()
}

/// Class patterns `(audio, visual)` for a config; a pure function of the seed.
pub fn class_patterns(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0fc_1a55);
    let k = cfg.k;
    let scale = |pats: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        pats.into_iter()
            .map(|p| p.into_iter().map(|x| x * cfg.signal_rms).collect())
            .collect()
    };
    let audio = scale(paired_patterns(k, cfg.d_a, cfg.pair_overlap, |c| c / 2, &mut rng));
    let visual = scale(paired_patterns(k, cfg.d_v, cfg.pair_overlap, |c| c % (k / 2).max(1), &mut rng));
    (audio, visual)
}

/// Generate one clip with its planted event.
fn generate_clip(
    cfg: &SynthConfig,
    id: String,
    class: usize,
    audio_pat: &[f64],
    visual_pat: &[f64],
    rng: &mut ChaCha8Rng,
) -> (ClipRecord, PlantedEvent) {
    let (t, h, w, da, dv) = (cfg.t, cfg.h, cfg.w, cfg.d_a, cfg.d_v);
    let len = rng.random_range(cfg.min_window..=cfg.max_window);
    let t0 = rng.random_range(0..=t - len);
    let side = rng.random_range(cfg.min_block..=cfg.max_block);
    let row = rng.random_range(0..=h - side);
    let col = rng.random_range(0..=w - side);
    let u: f64 = rng.random();
    let audible = u >= cfg.audio_dropout;
    let visible = u < cfg.audio_dropout || u >= cfg.audio_dropout + cfg.visual_dropout;
    let std = cfg.noise_std();

    let mut noise = |n: usize| -> Vec<f64> {
        if std == 0.0 {
            vec![0.0; n]
        } else {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    std * z
                })
                .collect()
        }
    };

    let mut audio = noise(t * da);
    let mut visual = noise(t * h * w * dv);
    let mut grounding = vec![0u8; t];
    let mut mask = vec![0.0f32; t * h * w];
    for ti in t0..t0 + len {
        grounding[ti] = 1;
        if audible {
            for (a, p) in audio[ti * da..(ti + 1) * da].iter_mut().zip(audio_pat) {
                *a += p;
            }
        }
        if !visible {
            continue;
        }
        for i in row..row + side {
            for j in col..col + side {
                let cell = (ti * h + i) * w + j;
                mask[cell] = 1.0;
                for (v, p) in visual[cell * dv..(cell + 1) * dv].iter_mut().zip(visual_pat) {
                    *v += p;
                }
            }
        }
    }
    let mut labels = vec![0u8; cfg.k];
    labels[class] = 1;
    let clip = ClipRecord {
        id,
        audio: Tensor::<f32>::from_f64(&[t, da], &audio).unwrap(),
        visual: Tensor::<f32>::from_f64(&[t, h, w, dv], &visual).unwrap(),
        labels,
        grounding: Some(grounding),
        spatial_mask: Some(Tensor::new(&[t, h, w], mask).unwrap()),
    };
    let event = PlantedEvent {
        class,
        t0,
        t1: t0 + len,
        row,
        col,
        side,
        audible,
        visible,
    };
    (clip, event)
}

/// An in-memory synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub splits: BTreeMap<String, Vec<ClipRecord>>,
    pub events: BTreeMap<String, PlantedEvent>,
}

impl SynthDataset {
    pub fn split(&self, name: &str) -> &[ClipRecord] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Generate every clip in memory. Output is a pure function of `cfg`.
pub fn generate_clips(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let (audio_pats, visual_pats) = class_patterns(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.clips_per_class;
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).max(1);
    let n_val = (n as f64 * cfg.val_fraction).round() as usize;
    let mut splits: BTreeMap<String, Vec<ClipRecord>> = BTreeMap::new();
    for s in ["train", "val", "test"] {
        splits.insert(s.to_string(), Vec::new());
    }
    let mut events = BTreeMap::new();
    for class in 0..cfg.k {
        for i in 0..n {
            let id = format!("c{class}_{i:04}");
            let (clip, event) = generate_clip(
                cfg,
                id.clone(),
                class,
                &audio_pats[class],
                &visual_pats[class],
                &mut rng,
            );
            let split = if i < n_train {
                "train"
            } else if i < n_train + n_val {
                "val"
            } else {
                "test"
            };
            splits.get_mut(split).unwrap().push(clip);
            events.insert(id, event);
        }
    }
    if splits["val"].is_empty() {
        splits.remove("val");
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        splits,
        events,
    })
}

/// Generate the dataset and write it under `out_dir` as `manifest.json`
/// plus one AVTF file per clip per modality and a spatial-mask sidecar.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let data = generate_clips(cfg)?;
    let mut splits = BTreeMap::new();
    for (split, clips) in &data.splits {
        let mut entries = Vec::with_capacity(clips.len());
        for clip in clips {
            let audio = format!("features/{}.audio.avtf", clip.id);
            let visual = format!("features/{}.visual.avtf", clip.id);
            let mask = format!("features/{}.mask.avtf", clip.id);
            write_feature_file(&clip.audio, out_dir.join(&audio))?;
            write_feature_file(&clip.visual, out_dir.join(&visual))?;
            if let Some(m) = &clip.spatial_mask {
                write_feature_file(m, out_dir.join(&mask))?;
            }
            entries.push(ClipEntry {
                id: clip.id.clone(),
                audio: audio.into(),
                visual: visual.into(),
                labels: clip.labels.clone(),
                grounding: clip.grounding.clone(),
                length: Some(cfg.t),
                spatial_mask: clip.spatial_mask.as_ref().map(|_| mask.into()),
            });
        }
        splits.insert(split.clone(), entries);
    }
    let manifest = DatasetManifest {
        name: format!("synthetic-k{}-seed{}", cfg.k, cfg.seed),
        k: cfg.k,
        classes: cfg.class_names(),
        splits,
    };
    manifest.write(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
