//! Classification by semantic retrieval: a sample is assigned the class whose
//! prototype is nearest in cosine distance. Also the approximate index and
//! the neighbour vote used by the embedding-similarity baseline, and the
//! embedding export consumed by the projection tools.

mod hnsw;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassId, Corpus, SampleKind};
use crate::nn::{dot, Checkpoint, Matrix};
use crate::pipeline::{PrototypeSet, TrainedPipeline};
use crate::{Error, Result};

pub use hnsw::{brute_force, random_unit_vectors, AnnIndex, HnswParams, INDEX_MAGIC, INDEX_VERSION};

const UNIT_TOL: f64 = 1e-6;

/// `1 - u.v` for unit vectors; lies in [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of dim {} and {}", u.len(), v.len())));
    }
    for (name, x) in [("first", u), ("second", v)] {
        let n = dot(x, x).sqrt();
        if !((n - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::Validation(format!("{name} vector has norm {n}, expected 1")));
        }
    }
    Ok((1.0 - dot(u, v)).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: ClassId,
    pub class_name: String,
    pub distance: f64,
    /// Every prototype, ascending by (distance, class id).
    pub ranking: Vec<(ClassId, f64)>,
}

/// Nearest prototype to an embedding. Exact ties go to the lowest class id.
pub fn classify_embedding(embedding: &[f64], prototypes: &PrototypeSet) -> Result<Prediction> {
    if prototypes.is_empty() {
        return Err(Error::Empty("prototype set".into()));
    }
    let mut ranking = prototypes
        .entries
        .iter()
        .map(|p| Ok((p.class_id, cosine_distance(embedding, &p.vector)?)))
        .collect::<Result<Vec<_>>>()?;
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let (class_id, distance) = ranking[0];
    let class_name = prototypes.get(class_id).map(|p| p.name.clone()).unwrap_or_default();
    Ok(Prediction {
        class_id,
        class_name,
        distance,
        ranking,
    })
}

fn check_compatible(encoder: &Checkpoint, prototypes: &PrototypeSet) -> Result<()> {
    if let Some(p) = prototypes.entries.first() {
        if p.vector.len() != encoder.encoder.embed_dim() {
            return Err(Error::Shape(format!(
                "prototypes have dim {} but the encoder embeds into {}",
                p.vector.len(),
                encoder.encoder.embed_dim()
            )));
        }
    }
    Ok(())
}

/// Featurizes and embeds one raw sample with `encoder`, then classifies it.
pub fn classify(raw: &[u8], encoder: &Checkpoint, prototypes: &PrototypeSet) -> Result<Prediction> {
    check_compatible(encoder, prototypes)?;
    let x = encoder.featurizer.featurize(raw)?;
    let e = encoder.encoder.encode(std::slice::from_ref(&x))?;
    classify_embedding(e.row(0), prototypes)
}

/// `classify` over many samples; results keep input order.
pub fn classify_batch(raws: &[&[u8]], encoder: &Checkpoint, prototypes: &PrototypeSet) -> Result<Vec<Prediction>> {
    check_compatible(encoder, prototypes)?;
    let emb = embed_raw(encoder, raws)?;
    emb.iter_rows().map(|row| classify_embedding(row, prototypes)).collect()
}

/// Embeds raw samples in chunks.
pub fn embed_raw(encoder: &Checkpoint, raws: &[&[u8]]) -> Result<Matrix> {
    let feats = raws
        .par_iter()
        .map(|r| encoder.featurizer.featurize(r))
        .collect::<Result<Vec<_>>>()?;
    let parts = feats
        .chunks(512)
        .map(|c| encoder.encoder.encode(c))
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(Matrix::zeros(0, encoder.encoder.embed_dim()));
    }
    Matrix::vstack(&parts)
}

/// Plurality vote over `(label, distance)` neighbours. Ties go to the label
/// with the smaller summed distance, then to the lowest class id.
pub fn knn_majority(neighbors: &[(ClassId, f64)]) -> Result<ClassId> {
    if neighbors.is_empty() {
        return Err(Error::Empty("neighbour list".into()));
    }
    let mut tally: BTreeMap<ClassId, (usize, f64)> = BTreeMap::new();
    for &(label, d) in neighbors {
        let e = tally.entry(label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let best = tally
        .into_iter()
        .min_by(|a, b| {
            b.1 .0
                .cmp(&a.1 .0)
                .then(a.1 .1.total_cmp(&b.1 .1))
                .then(a.0.cmp(&b.0))
        })
        .expect("non-empty tally");
    Ok(best.0)
}

/// One exported row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub class: String,
    pub kind: SampleKind,
    pub vector: Vec<f64>,
}

/// Embeds every sample (descriptions with the text encoder, payloads with
/// the payload encoder) in corpus order.
pub fn embed_corpus(pipeline: &TrainedPipeline, corpus: &Corpus) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::with_capacity(corpus.len());
    for (kind, ck) in [(SampleKind::Description, &pipeline.text), (SampleKind::Payload, &pipeline.payload)] {
        let samples: Vec<_> = corpus.samples().iter().filter(|s| s.kind == kind).collect();
        let raws: Vec<&[u8]> = samples.iter().map(|s| s.text.as_slice()).collect();
        let emb = embed_raw(ck, &raws)?;
        for (s, v) in samples.iter().zip(emb.iter_rows()) {
            rows.push(EmbeddingRow {
                id: s.id.clone(),
                class: corpus.class(s.class_id).map(|c| c.name.clone()).unwrap_or_default(),
                kind,
                vector: v.to_vec(),
            });
        }
    }
    let order: std::collections::HashMap<&str, usize> =
        corpus.samples().iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    rows.sort_by_key(|r| order[r.id.as_str()]);
    Ok(rows)
}

/// CSV with header `id,class,kind,e0..e{d-1}`. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_embeddings(rows: &[EmbeddingRow], dim: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "class".into(), "kind".into()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        if r.vector.len() != dim {
            return Err(Error::Shape(format!("row {} has dim {}, expected {dim}", r.id, r.vector.len())));
        }
        let mut rec = vec![r.id.clone(), r.class.clone(), r.kind.to_string()];
        rec.extend(r.vector.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn export_embeddings(pipeline: &TrainedPipeline, corpus: &Corpus, path: &Path) -> Result<()> {
    let rows = embed_corpus(pipeline, corpus)?;
    write_embeddings(&rows, pipeline.text.encoder.embed_dim(), path)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "class" || &headers[2] != "kind" {
        return Err(Error::Format("embedding file must start with id,class,kind".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let bad = |m: String| Error::Parse {
            line: line + 2,
            column: 0,
            message: m,
        };
        let kind = match &rec[2] {
            "description" => SampleKind::Description,
            "payload" => SampleKind::Payload,
            other => return Err(bad(format!("unknown kind {other}"))),
        };
        let vector = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            id: rec[0].to_string(),
            class: rec[1].to_string(),
            kind,
            vector,
        });
    }
    Ok(rows)
}
