//! Comparison methods: TF-IDF features with a random forest, an encoder
//! with a supervised classification head, and an embedding kNN vote.

mod forest;
mod knn;
mod supervised;
mod tfidf;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use forest::{ForestConfig, ForestModel, Node, Tree, FOREST_FORMAT_VERSION};
pub use knn::{KnnBaseline, DEFAULT_K};
pub use supervised::{LinearHead, SupervisedClassifier, SupervisedConfig, SupervisedOutcome};
pub use tfidf::{TfidfConfig, TfidfModel};

use crate::corpus::{ClassId, Corpus};
use crate::featurize::FeaturizerConfig;
use crate::nn::Encoder;
use crate::{Error, Result};

pub const BASELINE_FORMAT_VERSION: u32 = 1;

/// TF-IDF vectorizer and the forest trained on its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfForest {
    pub version: u32,
    pub tfidf: TfidfModel,
    pub forest: ForestModel,
}

impl TfidfForest {
    /// Fits on the payloads of `corpus`.
    pub fn train(corpus: &Corpus, tfidf: TfidfConfig, forest: ForestConfig, seed: u64) -> Result<Self> {
        let payloads: Vec<_> = corpus.payloads().collect();
        let docs: Vec<&[u8]> = payloads.iter().map(|p| p.text.as_slice()).collect();
        let labels: Vec<ClassId> = payloads.iter().map(|p| p.class_id).collect();
        let tfidf = TfidfModel::fit(&docs, tfidf)?;
        let features = tfidf.transform_all(&docs)?;
        let forest = ForestModel::train(&features, &labels, forest, seed)?;
        Ok(TfidfForest {
            version: BASELINE_FORMAT_VERSION,
            tfidf,
            forest,
        })
    }

    pub fn predict(&self, raws: &[&[u8]]) -> Result<Vec<ClassId>> {
        self.forest.predict_all(&self.tfidf.transform_all(raws)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Format(e.to_string()))?;
        crate::nn::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut model: TfidfForest = serde_json::from_slice(&bytes).map_err(|e| Error::json(&e, 0))?;
        if model.version != BASELINE_FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: model.version,
                expected: BASELINE_FORMAT_VERSION,
            });
        }
        model.forest.check_version()?;
        model.tfidf = model.tfidf.restore();
        Ok(model)
    }
}

/// Supervised classifier with the featurizer it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedBaseline {
    pub version: u32,
    pub featurizer: FeaturizerConfig,
    pub classifier: SupervisedClassifier,
}

impl SupervisedBaseline {
    /// Trains on the payloads of `corpus` over the corpus's full class table.
    pub fn train(
        corpus: &Corpus,
        featurizer: FeaturizerConfig,
        encoder: Encoder,
        config: &SupervisedConfig,
    ) -> Result<(Self, SupervisedOutcome)> {
        let payloads: Vec<_> = corpus.payloads().collect();
        let features = payloads
            .iter()
            .map(|p| featurizer.featurize(&p.text))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<ClassId> = payloads.iter().map(|p| p.class_id).collect();
        let classes: Vec<ClassId> = corpus.classes().iter().map(|c| c.id).collect();
        let outcome = SupervisedClassifier::train(&features, &labels, &classes, encoder, config)?;
        Ok((
            SupervisedBaseline {
                version: BASELINE_FORMAT_VERSION,
                featurizer,
                classifier: outcome.model.clone(),
            },
            outcome,
        ))
    }

    pub fn predict(&self, raws: &[&[u8]]) -> Result<Vec<ClassId>> {
        let mut out = Vec::with_capacity(raws.len());
        for chunk in raws.chunks(512) {
            let feats = chunk
                .iter()
                .map(|r| self.featurizer.featurize(r))
                .collect::<Result<Vec<_>>>()?;
            out.extend(self.classifier.predict(&feats)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Format(e.to_string()))?;
        crate::nn::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: SupervisedBaseline = serde_json::from_slice(&bytes).map_err(|e| Error::json(&e, 0))?;
        if model.version != BASELINE_FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: model.version,
                expected: BASELINE_FORMAT_VERSION,
            });
        }
        Ok(model)
    }
}
