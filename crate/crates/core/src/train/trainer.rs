use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWConfig, AdamWState};
use super::init::{init_pretrained_encoder, init_scratch, InitMode};
use crate::arch::{ModelGrads, ModelGraph};
use crate::data::{augment, sample_stream, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::loss::{jbce_grad, jbce_loss};
use crate::metrics::{confusion, dice_score};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight `w` of the Jaccard term.
    pub jaccard_weight: f64,
    pub epochs: usize,
    /// `None` uses the dataset's batch size.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub t_decoder: f64,
    /// Training images held out for validation.
    pub validation_k: usize,
    /// Micro-batches summed before each optimiser step.
    pub accumulate: usize,
    pub init: InitMode,
    pub pretrained: Option<PathBuf>,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            lr: a.lr,
            jaccard_weight: crate::loss::DEFAULT_JACCARD_WEIGHT,
            epochs: 300,
            batch_size: None,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            seed: 0,
            t_decoder: crate::arch::DEFAULT_DECODER_T,
            validation_k: 2,
            accumulate: 1,
            init: InitMode::Scratch,
            pretrained: None,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == Some(0) || self.accumulate == 0 {
            return bad("batch_size and accumulate must be >= 1".into());
        }
        if !(self.jaccard_weight >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("jaccard_weight and weight_decay must be >= 0".into());
        }
        if self.init == InitMode::PretrainedEncoder && self.pretrained.is_none() {
            return bad("init = pretrained-encoder needs a pretrained weight file".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Initialises `g` as configured.
    pub fn initialise(&self, g: &mut ModelGraph<f32>) -> Result<()> {
        match (&self.init, &self.pretrained) {
            (InitMode::PretrainedEncoder, Some(p)) => {
                init_pretrained_encoder(g, p, self.seed).map(|_| ())
            }
            _ => {
                init_scratch(g, self.seed);
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelGraph<f32>,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub history: Vec<EpochRecord>,
    /// Training stopped early on a non-finite loss or gradient.
    pub diverged: bool,
}

/// Index of the record with the highest validation Dice (ties → earlier);
/// the last record when none was validated.
pub fn select_best(history: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in history.iter().enumerate() {
        if let Some(d) = r.val_dice {
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((i, d));
            }
        }
    }
    best.map(|(i, _)| i)
        .or_else(|| history.len().checked_sub(1))
}

/// Mean per-image Dice at threshold 0.5 (inference-mode batch norm).
pub fn train_dice(g: &ModelGraph<f32>, samples: &[Sample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let p = g.forward(&s.image)?;
        sum += dice_score(&confusion(p.data(), s.mask.data(), 0.5, 0)?);
    }
    Ok(sum / samples.len().max(1) as f64)
}

type Batch = Result<(Tensor<f32>, Tensor<f32>)>;

fn make_batch(samples: &[&Sample], cfg: &AugmentConfig, epoch: u64) -> Batch {
    let aug = samples
        .iter()
        .map(|s| augment(s, cfg, epoch))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<&Tensor<f32>> = aug.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor<f32>> = aug.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Numeric(_))
}

/// Trains `g` from its current weights.
///
/// Each epoch shuffles the training set, augments batches on a background
/// thread, and takes one AdamW step per `accumulate` batches. After each
/// epoch the validation set (augmented once, epoch-0 stream) is scored at
/// threshold 0.5 and the best-scoring weights are kept. A non-finite loss
/// or gradient stops training and returns the best weights seen so far.
pub fn train(
    mut g: ModelGraph<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    batch_size: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let batch_size = cfg.batch_size.unwrap_or(batch_size).max(1);
    let val_aug = val_set
        .iter()
        .map(|s| augment(s, &cfg.augment, 0))
        .collect::<Result<Vec<_>>>()?;
    let opt = cfg.adamw();
    let mut state = AdamWState::new(&g.trainable());
    let mut history = Vec::new();
    let mut best = g.clone();
    let mut best_epoch = 0;
    let mut best_val: Option<f64> = None;
    let mut diverged = false;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut sample_stream(cfg.seed, "\u{0}shuffle", epoch as u64));
        let batches: Vec<Vec<&Sample>> = order
            .chunks(batch_size)
            .map(|c| c.iter().map(|&i| &train_set[i]).collect())
            .collect();
        let n_batches = batches.len();
        let result: Result<f64> = std::thread::scope(|scope| {
            let (tx, rx) = mpsc::sync_channel::<Batch>(2);
            let aug = &cfg.augment;
            scope.spawn(move || {
                for b in &batches {
                    if tx.send(make_batch(b, aug, epoch as u64)).is_err() {
                        break;
                    }
                }
            });
            let mut loss_sum = 0.0;
            let mut acc: Option<ModelGrads<f32>> = None;
            let mut acc_n = 0usize;
            for (bi, batch) in rx.iter().enumerate() {
                let (images, masks) = batch?;
                let pass = g.forward_train(&images)?;
                let w = cfg.jaccard_weight as f32;
                let loss = jbce_loss(pass.prob.data(), masks.data(), w)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("loss is {loss} in epoch {epoch}")));
                }
                loss_sum += loss as f64;
                let grad = Tensor::new(
                    pass.prob.shape(),
                    jbce_grad(pass.prob.data(), masks.data(), w)?,
                )?;
                let grads = g.backward(&pass, grad)?;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.add_assign(&grads)?,
                }
                acc_n += 1;
                if acc_n == cfg.accumulate || bi + 1 == n_batches {
                    let mut grads = acc.take().expect("accumulated");
                    grads.scale(1.0 / acc_n as f32);
                    acc_n = 0;
                    adamw_step(&mut g.trainable_mut(), &grads.tensors(), &mut state, &opt)?;
                }
            }
            Ok(loss_sum / n_batches as f64)
        });
        let loss = match result {
            Ok(l) => l,
            Err(e) if is_divergence(&e) => {
                log::warn!("training diverged: {e}");
                diverged = true;
                break 'epochs;
            }
            Err(e) => return Err(e),
        };
        let val_dice = if val_aug.is_empty() {
            None
        } else {
            match train_dice(&g, &val_aug) {
                Ok(d) => Some(d),
                Err(e) if is_divergence(&e) => {
                    log::warn!("validation diverged: {e}");
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        };
        let rec = EpochRecord {
            epoch,
            loss,
            val_dice,
        };
        log::info!(
            "epoch {epoch}: loss {loss:.6}{}",
            val_dice
                .map(|d| format!(", val dice {d:.4}"))
                .unwrap_or_default()
        );
        on_epoch(&rec);
        history.push(rec);
        let improved = match (val_dice, best_val) {
            (Some(d), Some(b)) => d > b,
            (Some(_), None) => true,
            (None, _) => best_val.is_none(),
        };
        if improved {
            best = g.clone();
            best_epoch = epoch;
            best_val = val_dice;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_dice: best_val,
        history,
        diverged,
    })
}

/// Columns: `epoch, loss, val_dice` (empty when there was no validation).
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
