//! Epoch loop shared by both stages: per-epoch validation, early stopping
//! and best-checkpoint selection.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::config::StageConfig;
use crate::nn::{AdamW, Encoder, EpochRecord};
use crate::{rng, Error, Result};

pub(crate) struct LoopOutcome {
    pub best: Encoder,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Stage-specific pieces of the loop.
pub(crate) trait StageTask {
    /// Number of training items (triplets or pairs).
    fn train_len(&self) -> usize;
    /// Items per optimizer step.
    fn step_size(&self) -> usize;
    /// Loss and optimizer step on the items at `order`; returns the batch loss.
    fn step(&mut self, encoder: &mut Encoder, optimizer: &mut AdamW, order: &[usize]) -> Result<f64>;
    /// Mean loss over the training items without updating.
    fn eval_train(&self, encoder: &Encoder) -> Result<f64>;
    /// Mean loss over the validation items, or `None` if there are none.
    fn eval_val(&self, encoder: &Encoder) -> Result<Option<f64>>;
    /// Called at the start of every epoch (after the first) before shuffling.
    fn begin_epoch(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

fn finite(value: f64, what: &str, epoch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} is {value} at epoch {epoch}")))
    }
}

/// Runs `config.epochs` epochs. Epoch 0 in the history is the evaluation of
/// the initial encoder. When there is no validation data the training loss
/// drives model selection.
pub(crate) fn run(task: &mut impl StageTask, mut encoder: Encoder, config: &StageConfig) -> Result<LoopOutcome> {
    let train0 = finite(task.eval_train(&encoder)?, "training loss", 0)?;
    let val0 = match task.eval_val(&encoder)? {
        Some(v) => finite(v, "validation loss", 0)?,
        None => train0,
    };
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: train0,
        val_loss: val0,
    }];
    log::info!("epoch 0: train {train0:.6} val {val0:.6}");

    let mut best = encoder.clone();
    let mut best_val = val0;
    let mut best_epoch = 0;
    let mut waited = 0;
    let mut stopped_early = false;
    let mut optimizer = AdamW::for_encoder(config.optimizer(), &encoder);

    for epoch in 1..=config.epochs {
        task.begin_epoch(epoch)?;
        let mut order: Vec<usize> = (0..task.train_len()).collect();
        let mut shuffle_rng: ChaCha8Rng = rng::derived(config.seed, epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut total = 0.0;
        for (step, chunk) in order.chunks(task.step_size().max(1)).enumerate() {
            let loss = task.step(&mut encoder, &mut optimizer, chunk)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss is {loss} at epoch {epoch}, step {step}")));
            }
            total += loss * chunk.len() as f64;
        }
        let train_loss = if order.is_empty() { 0.0 } else { total / order.len() as f64 };
        let val_loss = match task.eval_val(&encoder)? {
            Some(v) => finite(v, "validation loss", epoch)?,
            None => train_loss,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");

        if val_loss < best_val - config.early_stop.min_delta {
            best_val = val_loss;
            best = encoder.clone();
            best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited >= config.early_stop.patience {
                stopped_early = epoch < config.epochs;
                log::info!("early stop at epoch {epoch}; best epoch {best_epoch}");
                break;
            }
        }
    }
    Ok(LoopOutcome {
        best,
        best_epoch,
        history,
        stopped_early,
    })
}

/// Shuffles `0..n` with `seed` and returns (train, validation) index sets.
/// A non-zero fraction keeps at least one validation and one training item
/// whenever `n >= 2`.
pub(crate) fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::derived(seed, u64::MAX - 1));
    let mut n_val = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = n_val.min(n.saturating_sub(1));
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}
