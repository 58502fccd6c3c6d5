use std::collections::HashMap;

use super::config::{Stage, StageConfig};
use super::trainer::{self, StageTask};
use super::StageResult;
use crate::corpus::{AlignPair, Corpus, Sample};
use crate::featurize::{FeatureVector, FeaturizerConfig};
use crate::losses::mse_align_loss;
use crate::nn::{AdamW, Checkpoint, Encoder, Matrix, TrainingMetadata, TrainingStage};
use crate::{Error, Result};

struct Stage2Task<'a> {
    config: &'a StageConfig,
    /// Student inputs, one per pair.
    inputs: Vec<FeatureVector>,
    /// Frozen teacher embeddings, row `i` for pair `i`.
    targets: Matrix,
    train: Vec<usize>,
    val: Vec<usize>,
}

impl Stage2Task<'_> {
    fn batch(&self, items: &[usize]) -> (Vec<FeatureVector>, Matrix) {
        let inputs = items.iter().map(|&i| self.inputs[i].clone()).collect();
        let rows: Vec<Vec<f64>> = items.iter().map(|&i| self.targets.row(i).to_vec()).collect();
        let targets = Matrix::from_rows(&rows).expect("teacher rows share a width");
        (inputs, targets)
    }

    fn eval(&self, encoder: &Encoder, items: &[usize]) -> Result<f64> {
        if items.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for chunk in items.chunks(self.config.batch) {
            let (inputs, targets) = self.batch(chunk);
            total += mse_align_loss(&encoder.encode(&inputs)?, &targets)?.loss * chunk.len() as f64;
        }
        Ok(total / items.len() as f64)
    }
}

impl StageTask for Stage2Task<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn step_size(&self) -> usize {
        self.config.batch
    }

    fn step(&mut self, encoder: &mut Encoder, optimizer: &mut AdamW, order: &[usize]) -> Result<f64> {
        let items: Vec<usize> = order.iter().map(|&k| self.train[k]).collect();
        let (inputs, targets) = self.batch(&items);
        let cache = encoder.forward(&inputs)?;
        let out = mse_align_loss(cache.embeddings(), &targets)?;
        let grads = encoder.backward(&cache, &out.grad_student)?;
        optimizer.step_encoder(encoder, &grads)?;
        Ok(out.loss)
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
}

/// Trains the payload encoder `student` so that its embedding of each payload
/// matches the frozen teacher's embedding of the linked description.
pub fn train_stage2(
    corpus: &Corpus,
    pairs: &[AlignPair],
    teacher: &Checkpoint,
    student: Encoder,
    featurizer: FeaturizerConfig,
    config: &StageConfig,
) -> Result<StageResult> {
    config.validate()?;
    if config.stage != Stage::Two {
        return Err(Error::Config("train_stage2 needs a stage-two config".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("stage-2 alignment pairs".into()));
    }
    if student.input_dim() != featurizer.dim() {
        return Err(Error::Shape(format!(
            "student input dim {} does not match featurizer dim {}",
            student.input_dim(),
            featurizer.dim()
        )));
    }
    if student.embed_dim() != teacher.encoder.embed_dim() {
        return Err(Error::Shape(format!(
            "student embeds into {} dims but the teacher into {}",
            student.embed_dim(),
            teacher.encoder.embed_dim()
        )));
    }
    let by_id: HashMap<&str, &Sample> = corpus.samples().iter().map(|s| (s.id.as_str(), s)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("pair references unknown sample {id}")))
    };

    let teacher_fingerprint = teacher.encoder.fingerprint();
    let mut teacher_inputs = Vec::with_capacity(pairs.len());
    let mut inputs = Vec::with_capacity(pairs.len());
    for pair in pairs {
        teacher_inputs.push(teacher.featurizer.featurize(&lookup(&pair.description_id)?.text)?);
        inputs.push(featurizer.featurize(&lookup(&pair.payload_id)?.text)?);
    }
    let parts = teacher_inputs
        .chunks(256)
        .map(|c| teacher.encoder.encode(c))
        .collect::<Result<Vec<_>>>()?;
    let targets = Matrix::vstack(&parts)?;

    let (train, val) = trainer::split_indices(pairs.len(), config.validation_fraction, config.seed);
    let mut task = Stage2Task {
        config,
        inputs,
        targets,
        train,
        val,
    };
    let outcome = trainer::run(&mut task, student, config)?;
    debug_assert_eq!(teacher.encoder.fingerprint(), teacher_fingerprint);

    Ok(StageResult {
        checkpoint: Checkpoint {
            encoder: outcome.best,
            featurizer,
            metadata: TrainingMetadata {
                stage: TrainingStage::Stage2,
                epoch: outcome.best_epoch,
                loss_curve: outcome.history.clone(),
            },
        },
        history: outcome.history,
        stopped_early: outcome.stopped_early,
    })
}
