use std::collections::HashMap;

use super::config::{LossKind, Stage, StageConfig};
use super::trainer::{self, StageTask};
use super::StageResult;
use crate::corpus::{sample_triplets, Corpus, Triplet};
use crate::featurize::{featurize_text, FeatureVector, FeaturizerConfig, TextFeaturizerConfig};
use crate::losses::{cached_mnrl_step, mnrl_loss, triplet_loss, MnrlConfig};
use crate::nn::{AdamW, Checkpoint, Encoder, Matrix, TrainingMetadata, TrainingStage};
use crate::{Error, Result};

/// Triplet as positions into the featurized description table.
type Idx = (usize, usize, usize);

struct Stage1Task<'a> {
    corpus: &'a Corpus,
    config: &'a StageConfig,
    position: HashMap<&'a str, usize>,
    features: Vec<FeatureVector>,
    train: Vec<Idx>,
    val: Vec<Idx>,
}

impl<'a> Stage1Task<'a> {
    fn resolve(&self, triplets: &[Triplet]) -> Vec<Idx> {
        triplets
            .iter()
            .map(|t| {
                (
                    self.position[t.anchor_id.as_str()],
                    self.position[t.positive_id.as_str()],
                    self.position[t.negative_id.as_str()],
                )
            })
            .collect()
    }

    fn gather(&self, items: &[Idx], pick: impl Fn(&Idx) -> usize) -> Vec<FeatureVector> {
        items.iter().map(|t| self.features[pick(t)].clone()).collect()
    }

    fn mnrl(&self) -> MnrlConfig {
        self.config.mnrl()
    }

    /// Mean loss over `items` evaluated in the same batch sizes as training.
    fn eval(&self, encoder: &Encoder, items: &[Idx]) -> Result<f64> {
        if items.is_empty() {
            return Ok(0.0);
        }
        let size = self.step_size();
        let mut total = 0.0;
        for chunk in items.chunks(size) {
            let loss = match self.config.loss {
                LossKind::Triplet => {
                    let (a, p, n) = self.embed_triplets(encoder, chunk)?;
                    triplet_loss(&a, &p, &n, &self.config.triplet)?.loss
                }
                _ => {
                    let a = encoder.encode(&self.gather(chunk, |t| t.0))?;
                    let p = encoder.encode(&self.gather(chunk, |t| t.1))?;
                    mnrl_loss(&a, &p, self.config.mnrl_scale)?.loss
                }
            };
            total += loss * chunk.len() as f64;
        }
        Ok(total / items.len() as f64)
    }

    fn embed_triplets(&self, encoder: &Encoder, chunk: &[Idx]) -> Result<(Matrix, Matrix, Matrix)> {
        let b = chunk.len();
        let mut inputs = self.gather(chunk, |t| t.0);
        inputs.extend(self.gather(chunk, |t| t.1));
        inputs.extend(self.gather(chunk, |t| t.2));
        let all = encoder.encode(&inputs)?;
        Ok((all.slice_rows(0, b), all.slice_rows(b, 2 * b), all.slice_rows(2 * b, 3 * b)))
    }
}

impl StageTask for Stage1Task<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn step_size(&self) -> usize {
        match self.config.loss {
            LossKind::Triplet => self.config.batch,
            _ => self.config.effective_batch,
        }
    }

    fn step(&mut self, encoder: &mut Encoder, optimizer: &mut AdamW, order: &[usize]) -> Result<f64> {
        let items: Vec<Idx> = order.iter().map(|&i| self.train[i]).collect();
        match self.config.loss {
            LossKind::Triplet => {
                let b = items.len();
                let mut inputs = self.gather(&items, |t| t.0);
                inputs.extend(self.gather(&items, |t| t.1));
                inputs.extend(self.gather(&items, |t| t.2));
                let cache = encoder.forward(&inputs)?;
                let all = cache.embeddings();
                let out = triplet_loss(
                    &all.slice_rows(0, b),
                    &all.slice_rows(b, 2 * b),
                    &all.slice_rows(2 * b, 3 * b),
                    &self.config.triplet,
                )?;
                let upstream = Matrix::vstack(&[out.grad_anchors, out.grad_positives, out.grad_negatives])?;
                let grads = encoder.backward(&cache, &upstream)?;
                optimizer.step_encoder(encoder, &grads)?;
                Ok(out.loss)
            }
            _ => {
                let anchors = self.gather(&items, |t| t.0);
                let positives = self.gather(&items, |t| t.1);
                let (loss, grads) = cached_mnrl_step(encoder, &anchors, &positives, &self.mnrl())?;
                optimizer.step_encoder(encoder, &grads)?;
                Ok(loss)
            }
        }
    }

    fn eval_train(&self, encoder: &Encoder) -> Result<f64> {
        self.eval(encoder, &self.train)
    }

    fn eval_val(&self, encoder: &Encoder) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        self.eval(encoder, &self.val).map(Some)
    }

    fn begin_epoch(&mut self, epoch: usize) -> Result<()> {
        if self.config.resample_triplets && epoch > 1 {
            let seed = self.config.seed.wrapping_add(epoch as u64 * 0x9e37_79b9);
            let fresh = sample_triplets(self.corpus, self.train.len(), seed)?;
            self.train = self.resolve(&fresh);
        }
        Ok(())
    }
}

/// Trains the text encoder on triplets drawn from the corpus descriptions.
/// With cached MNRL only the (anchor, positive) pairs are used; the rest of
/// the batch supplies the negatives.
pub fn train_stage1(
    corpus: &Corpus,
    featurizer: TextFeaturizerConfig,
    encoder: Encoder,
    config: &StageConfig,
) -> Result<StageResult> {
    config.validate()?;
    if config.stage != Stage::One {
        return Err(Error::Config("train_stage1 needs a stage-one config".into()));
    }
    if encoder.input_dim() != featurizer.dim {
        return Err(Error::Shape(format!(
            "encoder input dim {} does not match text featurizer dim {}",
            encoder.input_dim(),
            featurizer.dim
        )));
    }
    let descriptions: Vec<_> = corpus.descriptions().collect();
    let features = descriptions
        .iter()
        .map(|d| featurize_text(&d.text_lossy(), &featurizer))
        .collect::<Result<Vec<_>>>()?;
    let position = descriptions.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();

    let triplets = sample_triplets(corpus, config.triplet_count, config.seed)?;
    let (train_idx, val_idx) = trainer::split_indices(triplets.len(), config.validation_fraction, config.seed);
    let mut task = Stage1Task {
        corpus,
        config,
        position,
        features,
        train: Vec::new(),
        val: Vec::new(),
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| triplets[i].clone()).collect::<Vec<_>>();
    task.train = task.resolve(&pick(&train_idx));
    task.val = task.resolve(&pick(&val_idx));
    if task.train.is_empty() {
        return Err(Error::Empty("stage-1 training triplets".into()));
    }

    let outcome = trainer::run(&mut task, encoder, config)?;
    Ok(StageResult {
        checkpoint: Checkpoint {
            encoder: outcome.best,
            featurizer: FeaturizerConfig::Text(featurizer),
            metadata: TrainingMetadata {
                stage: TrainingStage::Stage1,
                epoch: outcome.best_epoch,
                loss_curve: outcome.history.clone(),
            },
        },
        history: outcome.history,
        stopped_early: outcome.stopped_early,
    })
}
