//! Two-stage training and the prototype set used for retrieval.
//!
//! Stage 1 shapes a text embedding space from vulnerability descriptions
//! with a contrastive objective. Stage 2 freezes that text encoder and trains
//! a payload encoder whose embedding of each payload should match the text
//! encoder's embedding of the linked description. Classes are then
//! represented by the text encoder's embedding of a short generic label.

mod config;
mod prototypes;
mod stage1;
mod stage2;
mod trainer;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_pairs, Corpus};
use crate::featurize::FeaturizerConfig;
use crate::nn::{load_checkpoint, save_checkpoint, Checkpoint, EpochRecord, TrainingMetadata};
use crate::{Error, Result};

pub use config::{EarlyStop, LossKind, ModelConfig, Stage, StageConfig};
pub use prototypes::{build_prototypes, Prototype, PrototypeSet};
pub use stage1::train_stage1;
pub use stage2::train_stage2;
pub(crate) use trainer::split_indices;

/// Output of one training stage: the best-validation checkpoint and the
/// per-epoch losses (epoch 0 is the untrained evaluation).
#[derive(Debug, Clone)]
pub struct StageResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// True when early stopping ended training before the epoch budget.
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    /// Frozen after stage 1.
    pub text: Checkpoint,
    pub payload: Checkpoint,
    pub prototypes: PrototypeSet,
}

pub const TEXT_CHECKPOINT: &str = "text_encoder.ckpt";
pub const PAYLOAD_CHECKPOINT: &str = "payload_encoder.ckpt";
pub const PROTOTYPES_FILE: &str = "prototypes.json";

impl TrainedPipeline {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&self.text, &dir.join(TEXT_CHECKPOINT))?;
        save_checkpoint(&self.payload, &dir.join(PAYLOAD_CHECKPOINT))?;
        self.prototypes.save(&dir.join(PROTOTYPES_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(TrainedPipeline {
            text: load_checkpoint(&dir.join(TEXT_CHECKPOINT))?,
            payload: load_checkpoint(&dir.join(PAYLOAD_CHECKPOINT))?,
            prototypes: PrototypeSet::load(&dir.join(PROTOTYPES_FILE))?,
        })
    }

    /// Adds a class known only by its label text. Existing prototypes are
    /// untouched and the new class is immediately available to `classify`.
    pub fn add_zero_shot_class(&mut self, name: &str, label_text: &str) -> Result<crate::corpus::ClassId> {
        self.prototypes.add_class(&self.text, name, label_text)
    }
}

/// Per-stage histories as written next to the checkpoints.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub stage1: Vec<EpochRecord>,
    pub stage2: Vec<EpochRecord>,
}

/// History CSV: `epoch,train_loss,val_loss`.
pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Runs both stages on a training corpus and builds class prototypes.
/// Stage 1 consumes the corpus descriptions, stage 2 the payloads linked to
/// them; orphan payloads are skipped (they remain usable for evaluation).
pub fn train_pipeline(
    corpus: &Corpus,
    model: &ModelConfig,
    stage1: &StageConfig,
    stage2: &StageConfig,
) -> Result<(TrainedPipeline, TrainingHistory)> {
    model.validate()?;
    let text_init = model.text_encoder()?;
    let s1 = train_stage1(corpus, model.text_featurizer, text_init, stage1)?;

    let report = build_pairs(corpus);
    if !report.orphans.is_empty() {
        log::warn!("{} payload(s) without a linked description skipped in stage 2", report.orphans.len());
    }
    let student = model.payload_encoder(&s1.checkpoint)?;
    let s2 = train_stage2(corpus, &report.pairs, &s1.checkpoint, student, model.payload_featurizer, stage2)?;

    let (prototypes, warnings) = build_prototypes(&s1.checkpoint, corpus.classes())?;
    for w in warnings {
        log::warn!("{w}");
    }
    let history = TrainingHistory {
        stage1: s1.history,
        stage2: s2.history,
    };
    Ok((
        TrainedPipeline {
            text: s1.checkpoint,
            payload: s2.checkpoint,
            prototypes,
        },
        history,
    ))
}

/// Checkpoint of an encoder that has not been trained.
pub fn untrained_checkpoint(encoder: crate::nn::Encoder, featurizer: FeaturizerConfig) -> Checkpoint {
    Checkpoint {
        encoder,
        featurizer,
        metadata: TrainingMetadata::untrained(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_classes, Provenance, Sample, SampleKind, VulnClass};
    use crate::featurize::{featurize_text, PayloadFeaturizerConfig, TextFeaturizerConfig};
    use crate::nn::l2_norm;
    use crate::synthgen::{generate_template_corpus, GenSpec};

    fn small_model() -> ModelConfig {
        ModelConfig {
            text_featurizer: TextFeaturizerConfig { dim: 1 << 10 },
            payload_featurizer: FeaturizerConfig::Payload(PayloadFeaturizerConfig {
                dim: 1 << 11,
                ngram_min: 3,
                ngram_max: 4,
            }),
            hidden_dims: vec![32],
            embed_dim: 16,
            ..ModelConfig::default()
        }
    }

    fn fixture() -> Corpus {
        let spec = GenSpec::new(24, 42).with_classes(&["XSS", "Dir-traversal", "Injection"]).unwrap();
        generate_template_corpus(&spec).unwrap()
    }

    fn s1(epochs: usize) -> StageConfig {
        StageConfig {
            epochs,
            effective_batch: 32,
            micro_batch: 8,
            triplet_count: 256,
            lr: 1e-3,
            ..StageConfig::stage1()
        }
    }

    fn s2(epochs: usize) -> StageConfig {
        StageConfig {
            epochs,
            lr: 1e-3,
            ..StageConfig::stage2()
        }
    }

    #[test]
    fn zero_epochs_keep_the_initial_encoder() {
        let m = small_model();
        let init = m.text_encoder().unwrap();
        let r = train_stage1(&fixture(), m.text_featurizer, init.clone(), &s1(0)).unwrap();
        assert_eq!(r.checkpoint.encoder, init);
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.checkpoint.metadata.epoch, 0);
    }

    #[test]
    fn stage1_lowers_validation_loss_and_is_deterministic() {
        let m = small_model();
        let c = fixture();
        let a = train_stage1(&c, m.text_featurizer, m.text_encoder().unwrap(), &s1(20)).unwrap();
        let first = a.history[0].val_loss;
        let best = a.history[a.checkpoint.metadata.epoch].val_loss;
        assert!(best < first, "{best} !< {first}");
        let b = train_stage1(&c, m.text_featurizer, m.text_encoder().unwrap(), &s1(20)).unwrap();
        assert_eq!(a.checkpoint.encoder.fingerprint(), b.checkpoint.encoder.fingerprint());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn triplet_objective_trains_too() {
        let m = small_model();
        let cfg = StageConfig {
            loss: LossKind::Triplet,
            ..s1(10)
        };
        let r = train_stage1(&fixture(), m.text_featurizer, m.text_encoder().unwrap(), &cfg).unwrap();
        assert!(r.history[r.checkpoint.metadata.epoch].val_loss < r.history[0].val_loss);
    }

    #[test]
    fn returned_model_is_the_best_validation_epoch() {
        let m = small_model();
        let cfg = StageConfig {
            early_stop: EarlyStop {
                patience: 2,
                min_delta: 0.0,
            },
            lr: 0.05,
            ..s1(30)
        };
        let r = train_stage1(&fixture(), m.text_featurizer, m.text_encoder().unwrap(), &cfg).unwrap();
        let best = r.checkpoint.metadata.epoch;
        let min = r.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(r.history[best].val_loss, min);
        if r.stopped_early {
            // The last `patience` epochs did not improve on the best one.
            assert_eq!(r.history.len() - 1, best + 2);
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let m = small_model();
        let cfg = StageConfig {
            mnrl_scale: f64::MAX,
            ..s1(2)
        };
        let err = train_stage1(&fixture(), m.text_featurizer, m.text_encoder().unwrap(), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn stage2_freezes_teacher_and_lowers_mse() {
        let m = small_model();
        let c = fixture();
        let teacher = train_stage1(&c, m.text_featurizer, m.text_encoder().unwrap(), &s1(5)).unwrap().checkpoint;
        let before = teacher.encoder.fingerprint();
        let pairs = build_pairs(&c).pairs;
        let student = m.payload_encoder(&teacher).unwrap();
        let r = train_stage2(&c, &pairs, &teacher, student, m.payload_featurizer, &s2(20)).unwrap();
        assert_eq!(teacher.encoder.fingerprint(), before);
        assert!(r.history[r.checkpoint.metadata.epoch].val_loss < r.history[0].val_loss);
    }

    #[test]
    fn aligned_copy_is_a_fixed_point() {
        let m = small_model();
        let classes = default_classes();
        let mut samples = Vec::new();
        for (i, text) in ["sql injection in login form", "reflected script in search", "path traversal in download"]
            .iter()
            .enumerate()
        {
            for (kind, suffix) in [(SampleKind::Description, "d"), (SampleKind::Payload, "p")] {
                samples.push(Sample {
                    id: format!("t{i}-{suffix}"),
                    kind,
                    text: text.as_bytes().to_vec(),
                    class_id: classes[i].id,
                    published: None,
                    threat_id: format!("t{i}"),
                    truncated: false,
                });
            }
        }
        let c = Corpus::new(classes, samples, Provenance::Real).unwrap();
        let teacher = untrained_checkpoint(m.text_encoder().unwrap(), FeaturizerConfig::Text(m.text_featurizer));
        let cfg = StageConfig {
            weight_decay: 0.0,
            validation_fraction: 0.0,
            ..s2(3)
        };
        let pairs = build_pairs(&c).pairs;
        let r = train_stage2(&c, &pairs, &teacher, teacher.encoder.clone(), teacher.featurizer, &cfg).unwrap();
        assert_eq!(r.history[0].train_loss, 0.0);
        assert_eq!(r.checkpoint.encoder, teacher.encoder);
    }

    #[test]
    fn stage2_needs_pairs() {
        let m = small_model();
        let teacher = untrained_checkpoint(m.text_encoder().unwrap(), FeaturizerConfig::Text(m.text_featurizer));
        let student = m.payload_encoder(&teacher).unwrap();
        let err = train_stage2(&fixture(), &[], &teacher, student, m.payload_featurizer, &s2(1)).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn wrong_loss_for_stage_is_rejected() {
        let m = small_model();
        let cfg = StageConfig {
            loss: LossKind::MseAlign,
            ..s1(1)
        };
        assert!(matches!(
            train_stage1(&fixture(), m.text_featurizer, m.text_encoder().unwrap(), &cfg),
            Err(Error::Config(_))
        ));
    }

    fn text_checkpoint() -> Checkpoint {
        let m = small_model();
        untrained_checkpoint(m.text_encoder().unwrap(), FeaturizerConfig::Text(m.text_featurizer))
    }

    #[test]
    fn fifteen_labels_give_fifteen_unit_prototypes() {
        let (set, warnings) = build_prototypes(&text_checkpoint(), &default_classes()).unwrap();
        assert_eq!(set.len(), 15);
        assert!(warnings.is_empty());
        for p in &set.entries {
            assert!((l2_norm(&p.vector) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prototype_matches_independent_encoding() {
        let ck = text_checkpoint();
        let (set, _) = build_prototypes(&ck, &default_classes()).unwrap();
        let inj = set.by_name("Injection").unwrap();
        let FeaturizerConfig::Text(cfg) = ck.featurizer else { unreachable!() };
        let x = featurize_text(&inj.label, &cfg).unwrap();
        let e = ck.encoder.encode(&[x]).unwrap();
        assert_eq!(inj.vector, e.row(0));
    }

    #[test]
    fn shared_labels_warn() {
        let mut classes = default_classes();
        classes[1].generic_label = classes[0].generic_label.clone();
        let (set, warnings) = build_prototypes(&text_checkpoint(), &classes).unwrap();
        assert_eq!(set.entries[0].vector, set.entries[1].vector);
        assert_eq!(warnings.len(), 1);
        let missing = vec![VulnClass {
            generic_label: " ".into(),
            ..classes[0].clone()
        }];
        assert!(build_prototypes(&text_checkpoint(), &missing).is_err());
    }

    #[test]
    fn zero_shot_class_is_appended() {
        let ck = text_checkpoint();
        let (mut set, _) = build_prototypes(&ck, &default_classes()).unwrap();
        let before = set.clone();
        let id = set.add_class(&ck, "Crypto-mining", "Unauthorized use of server resources to mine cryptocurrency.").unwrap();
        assert_eq!(id.0, 16);
        assert_eq!(set.len(), 16);
        assert_eq!(&set.entries[..15], &before.entries[..]);
        assert!(set.add_class(&ck, "crypto_mining", "x").is_err());

        let removed = set.remove_class("Crypto-mining").unwrap();
        set.add_class(&ck, &removed.name, &removed.label).unwrap();
        assert_eq!(set.entries[15].vector, removed.vector);
    }

    #[test]
    fn pipeline_round_trips_through_a_directory() {
        let m = small_model();
        let c = fixture();
        let (p, h) = train_pipeline(&c, &m, &s1(2), &s2(2)).unwrap();
        assert_eq!(h.stage1.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let back = TrainedPipeline::load(dir.path()).unwrap();
        assert_eq!(back.text, p.text);
        assert_eq!(back.payload, p.payload);
        assert_eq!(back.prototypes, p.prototypes);
        let csv = dir.path().join("h.csv");
        write_history_csv(&h.stage2, &csv).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss\n0,"));
        assert_eq!(text.lines().count(), h.stage2.len() + 1);
    }
}
