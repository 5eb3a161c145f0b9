use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{loss_on_tape, stan_loss, LossBreakdown, LossTerms};
use crate::error::{Result, StanError};
use crate::io::ClipRecord;
use crate::metrics;
use crate::model::{Stan, StanConfig};
use crate::tensor::{Tape, Tensor};

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the shuffle order.
    pub seed: u64,
    /// Epoch at which the learning rate is multiplied by `decay_factor`.
    /// Defaults to two thirds of `epochs`.
    pub decay_epoch: Option<usize>,
    pub decay_factor: f64,
    /// Worker threads for per-clip gradients. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 32,
            seed: 0,
            decay_epoch: None,
            decay_factor: 0.1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(StanError::Config(
                "epochs, batch_size and threads must be positive".into(),
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(StanError::Config(format!(
                "decay_factor {} outside (0, 1]",
                self.decay_factor
            )));
        }
        Ok(())
    }

    pub fn decay_at(&self) -> usize {
        self.decay_epoch.unwrap_or((2 * self.epochs).div_ceil(3))
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_at() {
            self.adam.lr * self.decay_factor
        } else {
            self.adam.lr
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_final: f64,
    pub loss_cam: f64,
    pub loss_cav: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub val_top1: f64,
    pub val_loss: f64,
    pub model: Stan<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub model: Stan<f32>,
    /// Highest validation top-1 seen, lowest validation loss on ties.
    pub best: Option<BestCheckpoint>,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// The best-validation model when a validation split was given, else the
    /// final one.
    pub fn selected(&self) -> &Stan<f32> {
        self.best.as_ref().map_or(&self.model, |b| &b.model)
    }
}

/// Top-1 accuracy and mean objective on a held-out split.
fn validation(model: &Stan<f32>, clips: &[ClipRecord]) -> Result<(f64, f64)> {
    let mut scores = Vec::with_capacity(clips.len());
    let mut labels = Vec::with_capacity(clips.len());
    let mut loss = 0.0;
    for c in clips {
        let out = model.forward(c)?;
        loss += stan_loss(&out, &c.labels)?.total;
        scores.push(out.p.to_f64_vec());
        labels.push(c.labels.clone());
    }
    Ok((metrics::top1_accuracy(&scores, &labels)?, loss / clips.len() as f64))
}

/// Loss and parameter gradients (in `params()` order) of one clip.
fn clip_gradients(model: &Stan<f32>, clip: &ClipRecord) -> Result<(Vec<Option<Tensor<f32>>>, LossBreakdown)> {
    let mut tape = Tape::new();
    let graph = model.build(&mut tape, &clip.audio, &clip.visual)?;
    let loss = loss_on_tape(&mut tape, &graph, &clip.labels, LossTerms::ALL)?;
    let grads = tape.backward(loss.total)?;
    let per_param = model
        .params
        .params()
        .iter()
        .map(|p| grads.of_param(&p.name))
        .collect();
    Ok((per_param, loss.breakdown(&tape)))
}

type ClipResult = Result<(Vec<Option<Tensor<f32>>>, LossBreakdown)>;

fn batch_gradients(model: &Stan<f32>, clips: &[&ClipRecord], threads: usize) -> Vec<ClipResult> {
    if threads <= 1 || clips.len() <= 1 {
        return clips.iter().map(|c| clip_gradients(model, c)).collect();
    }
    let chunk = clips.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = clips
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|c| clip_gradients(model, c)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    })
}

/// Train a freshly initialised model on `train`, selecting on `val` when given.
pub fn train(
    stan_cfg: &StanConfig,
    cfg: &TrainConfig,
    train: &[ClipRecord],
    val: Option<&[ClipRecord]>,
) -> Result<TrainOutcome> {
    let model = Stan::<f32>::new(stan_cfg.clone())?;
    train_from(model, cfg, train, val, |_| {})
}

/// Continue training `model`, calling `on_epoch` after each epoch.
pub fn train_from(
    mut model: Stan<f32>,
    cfg: &TrainConfig,
    train: &[ClipRecord],
    val: Option<&[ClipRecord]>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(StanError::Config("training split is empty".into()));
    }
    let val = val.filter(|v| !v.is_empty());
    for clip in train.iter().chain(val.into_iter().flatten()) {
        model.config.check_inputs(clip.audio.shape(), clip.visual.shape())?;
        clip.validate(Some(model.config.k))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestCheckpoint> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let clips: Vec<&ClipRecord> = batch.iter().map(|&i| &train[i]).collect();
            let results = batch_gradients(&model, &clips, cfg.threads);
            let scale = 1.0 / clips.len() as f32;
            model.params.zero_grad();
            for r in results {
                let (grads, loss) = r?;
                epoch_loss.add(&loss);
                for (p, g) in model.params.params_mut().into_iter().zip(&grads) {
                    if let Some(g) = g {
                        p.accumulate(g, scale)?;
                    }
                }
            }
            adam_step(&mut model.params.params_mut(), &mut state, &cfg.adam, lr)?;
            if !model.params.is_finite() {
                return Err(StanError::Contract(format!(
                    "parameters became non-finite in epoch {epoch}"
                )));
            }
        }
        let mean = epoch_loss.scaled(1.0 / train.len() as f64);
        let mut val_top1 = None;
        if let Some(v) = val {
            let (acc, loss) = validation(&model, v)?;
            val_top1 = Some(acc);
            let better = best
                .as_ref()
                .is_none_or(|b| acc > b.val_top1 || (acc == b.val_top1 && loss < b.val_loss));
            if better {
                best = Some(BestCheckpoint {
                    epoch,
                    val_top1: acc,
                    val_loss: loss,
                    model: model.clone(),
                });
            }
        }
        let entry = EpochLog {
            epoch,
            loss_total: mean.total,
            loss_final: mean.bce_final,
            loss_cam: mean.bce_cam,
            loss_cav: mean.bce_cav,
            val_top1,
        };
        log::info!("epoch {epoch}: loss {:.5}", entry.loss_total);
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, best, log })
}
