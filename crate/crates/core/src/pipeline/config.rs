use serde::{Deserialize, Serialize};

use crate::featurize::{FeaturizerConfig, PayloadFeaturizerConfig, TextFeaturizerConfig};
use crate::losses::{MnrlConfig, TripletLossConfig};
use crate::nn::{Activation, AdamWConfig, Checkpoint, Encoder, EncoderConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CachedMnrl,
    Triplet,
    MseAlign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Epochs without an improvement larger than `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            patience: 3,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub stage: Stage,
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Pairs per optimizer step for cached MNRL.
    pub effective_batch: usize,
    pub micro_batch: usize,
    /// Items per optimizer step for triplet and alignment losses.
    pub batch: usize,
    pub mnrl_scale: f64,
    pub triplet: TripletLossConfig,
    /// Size of the fixed stage-1 triplet set.
    pub triplet_count: usize,
    /// Draw a fresh training triplet set every epoch instead of reusing one.
    pub resample_triplets: bool,
    pub early_stop: EarlyStop,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::stage1()
    }
}

impl StageConfig {
    pub fn stage1() -> Self {
        StageConfig {
            stage: Stage::One,
            loss: LossKind::CachedMnrl,
            epochs: 20,
            lr: 4e-4,
            weight_decay: 0.01,
            effective_batch: 256,
            micro_batch: 32,
            batch: 32,
            mnrl_scale: 20.0,
            triplet: TripletLossConfig::default(),
            triplet_count: 4096,
            resample_triplets: false,
            early_stop: EarlyStop::default(),
            validation_fraction: 0.1,
            seed: 42,
        }
    }

    pub fn stage2() -> Self {
        StageConfig {
            stage: Stage::Two,
            loss: LossKind::MseAlign,
            batch: 32,
            ..StageConfig::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let loss_ok = match self.stage {
            Stage::One => matches!(self.loss, LossKind::CachedMnrl | LossKind::Triplet),
            Stage::Two => self.loss == LossKind::MseAlign,
        };
        if !loss_ok {
            return Err(Error::Config(format!("loss {:?} is not valid for stage {:?}", self.loss, self.stage)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.early_stop.patience < 1 {
            return Err(Error::Config("early-stopping patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.loss == LossKind::CachedMnrl {
            self.mnrl().validate()?;
        }
        Ok(())
    }

    pub fn mnrl(&self) -> MnrlConfig {
        MnrlConfig {
            scale: self.mnrl_scale,
            micro_batch: self.micro_batch,
            effective_batch: self.effective_batch,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Featurizers and encoder shapes for both modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub text_featurizer: TextFeaturizerConfig,
    pub payload_featurizer: FeaturizerConfig,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub text_seed: u64,
    pub payload_seed: u64,
    /// Start the payload encoder as a copy of the trained text encoder
    /// (requires equal input dimensions).
    pub init_payload_from_text: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_featurizer: TextFeaturizerConfig { dim: 1 << 14 },
            payload_featurizer: FeaturizerConfig::Payload(PayloadFeaturizerConfig {
                dim: 1 << 14,
                ngram_min: 3,
                ngram_max: 4,
            }),
            hidden_dims: vec![256],
            embed_dim: 128,
            activation: Activation::Relu,
            text_seed: 1,
            payload_seed: 2,
            init_payload_from_text: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if let FeaturizerConfig::Payload(p) = &self.payload_featurizer {
            p.validate()?;
        }
        if self.text_featurizer.dim < 2 {
            return Err(Error::Config("text featurizer dim must be >= 2".into()));
        }
        Ok(())
    }

    pub fn text_encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.text_featurizer.dim,
            hidden_dims: self.hidden_dims.clone(),
            embed_dim: self.embed_dim,
            activation: self.activation,
            seed: self.text_seed,
        }
    }

    pub fn payload_encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.payload_featurizer.dim(),
            seed: self.payload_seed,
            ..self.text_encoder_config()
        }
    }

    pub fn text_encoder(&self) -> Result<Encoder> {
        Encoder::new(self.text_encoder_config())
    }

    /// Initial payload encoder: independent random init, or a copy of the
    /// trained text encoder when `init_payload_from_text` is set.
    pub fn payload_encoder(&self, teacher: &Checkpoint) -> Result<Encoder> {
        if self.init_payload_from_text {
            if teacher.encoder.input_dim() != self.payload_featurizer.dim() {
                return Err(Error::Config(format!(
                    "cannot copy a text encoder with input dim {} into a payload encoder with input dim {}",
                    teacher.encoder.input_dim(),
                    self.payload_featurizer.dim()
                )));
            }
            return Ok(teacher.encoder.clone());
        }
        Encoder::new(self.payload_encoder_config())
    }
}
