use std::fs;
use std::path::Path;

use crate::corpus::{ClassId, Corpus};
use crate::nn::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::retrieve::{embed_raw, knn_majority, AnnIndex, HnswParams};
use crate::{Error, Result};

pub const DEFAULT_K: usize = 5;

/// Majority vote over the nearest training payloads in an encoder's
/// embedding space, retrieved from an HNSW index.
#[derive(Debug, Clone)]
pub struct KnnBaseline {
    pub encoder: Checkpoint,
    pub index: AnnIndex,
    pub k: usize,
}

impl KnnBaseline {
    /// Indexes the payloads of `corpus`. A `k` above the number of indexed
    /// payloads is clamped with a warning.
    pub fn build(corpus: &Corpus, encoder: Checkpoint, k: usize, params: HnswParams) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let payloads: Vec<_> = corpus.payloads().collect();
        if payloads.is_empty() {
            return Err(Error::Empty("kNN baseline needs training payloads".into()));
        }
        let raws: Vec<&[u8]> = payloads.iter().map(|p| p.text.as_slice()).collect();
        let labels: Vec<ClassId> = payloads.iter().map(|p| p.class_id).collect();
        let emb = embed_raw(&encoder, &raws)?;
        let vectors: Vec<Vec<f64>> = emb.iter_rows().map(|r| r.to_vec()).collect();
        let index = AnnIndex::build(&vectors, &labels, params)?;
        let k = if k > index.len() {
            log::warn!("k = {k} exceeds the {} indexed payloads; using k = {}", index.len(), index.len());
            index.len()
        } else {
            k
        };
        Ok(KnnBaseline { encoder, index, k })
    }

    pub fn predict(&self, raws: &[&[u8]]) -> Result<Vec<ClassId>> {
        let emb = embed_raw(&self.encoder, raws)?;
        emb.iter_rows()
            .map(|q| {
                let hits = self.index.query(q, self.k)?;
                let votes: Vec<(ClassId, f64)> = hits.into_iter().map(|(id, d)| (self.index.label(id), d)).collect();
                knn_majority(&votes)
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&self.encoder, &dir.join("encoder.ckpt"))?;
        self.index.save(&dir.join("index.hnsw"))?;
        crate::nn::write_atomic(&dir.join("k.txt"), format!("{}\n", self.k).as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let encoder = load_checkpoint(&dir.join("encoder.ckpt"))?;
        let index = AnnIndex::load(&dir.join("index.hnsw"))?;
        let path = dir.join("k.txt");
        let k = fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))?
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{} does not hold an integer", path.display())))?;
        Ok(KnnBaseline { encoder, index, k })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Encoder, EncoderConfig};
    use crate::pipeline::untrained_checkpoint;
    use crate::synthgen::{generate_template_corpus, GenSpec};

    fn setup() -> (Corpus, Checkpoint) {
        let spec = GenSpec::new(12, 3).with_classes(&["XSS", "DoS", "Worm"]).unwrap();
        let corpus = generate_template_corpus(&spec).unwrap();
        let feat = crate::featurize::FeaturizerConfig::Payload(crate::featurize::PayloadFeaturizerConfig {
            dim: 1 << 11,
            ngram_min: 3,
            ngram_max: 4,
        });
        let enc = Encoder::new(EncoderConfig {
            input_dim: 1 << 11,
            hidden_dims: vec![32],
            embed_dim: 16,
            activation: Activation::Relu,
            seed: 5,
        })
        .unwrap();
        (corpus, untrained_checkpoint(enc, feat))
    }

    #[test]
    fn training_payloads_vote_for_themselves_with_k1() {
        let (corpus, ckpt) = setup();
        let knn = KnnBaseline::build(&corpus, ckpt, 1, HnswParams::default()).unwrap();
        let raws: Vec<&[u8]> = corpus.payloads().map(|p| p.text.as_slice()).collect();
        let truth: Vec<ClassId> = corpus.payloads().map(|p| p.class_id).collect();
        assert_eq!(knn.predict(&raws).unwrap(), truth);
    }

    #[test]
    fn oversized_k_is_clamped() {
        let (corpus, ckpt) = setup();
        let n = corpus.payloads().count();
        let knn = KnnBaseline::build(&corpus, ckpt, n + 10, HnswParams::default()).unwrap();
        assert_eq!(knn.k, n);
        assert!(KnnBaseline::build(&corpus, knn.encoder.clone(), 0, HnswParams::default()).is_err());
    }

    #[test]
    fn save_and_load_predict_alike() {
        let (corpus, ckpt) = setup();
        let knn = KnnBaseline::build(&corpus, ckpt, DEFAULT_K, HnswParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        knn.save(dir.path()).unwrap();
        let back = KnnBaseline::load(dir.path()).unwrap();
        let raws: Vec<&[u8]> = corpus.payloads().map(|p| p.text.as_slice()).collect();
        assert_eq!(back.predict(&raws).unwrap(), knn.predict(&raws).unwrap());
        assert_eq!(back.k, DEFAULT_K);
    }
}
