//! Sparse hashed features for descriptions and raw HTTP payloads.
//!
//! Both featurizers use signed feature hashing with fixed FNV-1a 64-bit
//! hashes, so a given byte string produces the same vector on every run and
//! platform:
//!
//! * bucket = `fnv1a64(token, 0xcbf29ce484222325) % dim`
//! * sign   = `+1` when the top bit of `fnv1a64(token, SIGN_BASIS)` is clear,
//!   `-1` otherwise, with `SIGN_BASIS = 0xcbf29ce484222325 ^ 0x9e3779b97f4a7c15`.
//!
//! Text: lowercased runs of alphanumeric characters give unigrams, adjacent
//! pairs (joined by one space) give bigrams. Each bucket holds the signed
//! feature count divided by `sqrt(T)`, `T` being the number of emitted
//! features, so the L2 norm is at most `sqrt(T)` and equals 1 when no two
//! features collide.
//!
//! Payloads: case-preserving byte n-grams over the request and over the
//! response, hashed into disjoint halves `[0, dim/2)` and `[dim/2, dim)`.
//! The whole vector is then scaled to unit L2 norm (norm bound 1).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
pub const SIGN_BASIS: u64 = FNV_OFFSET ^ 0x9e37_79b9_7f4a_7c15;

/// Separator between request and response in a stored payload.
pub const RESPONSE_SEPARATOR: &str = "\n\n---RESPONSE---\n\n";

pub fn fnv1a64(bytes: &[u8], basis: u64) -> u64 {
    bytes.iter().fold(basis, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Bucket and sign of one token.
pub fn hash_token(token: &[u8], buckets: usize) -> (usize, f64) {
    let bucket = (fnv1a64(token, FNV_OFFSET) % buckets as u64) as usize;
    let sign = if fnv1a64(token, SIGN_BASIS) >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Sparse vector with strictly increasing indices and finite weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sums duplicate indices and drops exact zeros.
    pub fn from_entries(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            if i >= dim {
                return Err(Error::Shape(format!("feature index {i} outside dimension {dim}")));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("feature weight at index {i}")));
            }
            if indices.last() == Some(&(i as u32)) {
                *values.last_mut().unwrap() += w;
            } else {
                indices.push(i as u32);
                values.push(w);
            }
        }
        let mut out = FeatureVector { dim, indices, values };
        out.retain_nonzero();
        Ok(out)
    }

    /// Dense input; zeros are not stored.
    pub fn from_dense(values: &[f64]) -> Result<Self> {
        FeatureVector::from_entries(values.len(), values.iter().copied().enumerate().collect())
    }

    fn retain_nonzero(&mut self) {
        let mut k = 0;
        for j in 0..self.indices.len() {
            if self.values[j] != 0.0 {
                self.indices[k] = self.indices[j];
                self.values[k] = self.values[j];
                k += 1;
            }
        }
        self.indices.truncate(k);
        self.values.truncate(k);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> FeatureVector {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out.retain_nonzero();
        out
    }

    /// Applies `f` to every stored weight. Implicit zeros are left alone.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> FeatureVector {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out.retain_nonzero();
        out
    }
}

/// A request with an optional server response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpSample {
    pub request: Vec<u8>,
    pub response: Option<Vec<u8>>,
}

/// Splits at the first response separator; later separators stay inside the
/// response.
pub fn parse_http_sample(raw: &[u8]) -> Result<HttpSample> {
    if raw.is_empty() {
        return Err(Error::Format("empty payload".into()));
    }
    let sep = RESPONSE_SEPARATOR.as_bytes();
    let (request, response) = match find(raw, sep) {
        Some(at) => (&raw[..at], Some(raw[at + sep.len()..].to_vec())),
        None => (raw, None),
    };
    if request.is_empty() {
        return Err(Error::Format("payload has an empty request part".into()));
    }
    Ok(HttpSample {
        request: request.to_vec(),
        response,
    })
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextFeaturizerConfig {
    pub dim: usize,
}

impl Default for TextFeaturizerConfig {
    fn default() -> Self {
        TextFeaturizerConfig { dim: 1 << 18 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadFeaturizerConfig {
    /// Total dimension; the request and response halves get `dim / 2` each.
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for PayloadFeaturizerConfig {
    fn default() -> Self {
        PayloadFeaturizerConfig {
            dim: 1 << 19,
            ngram_min: 3,
            ngram_max: 4,
        }
    }
}

impl PayloadFeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(Error::Config(format!("payload dim must be even and >= 2, got {}", self.dim)));
        }
        if !(2 <= self.ngram_min && self.ngram_min <= self.ngram_max && self.ngram_max <= 8) {
            return Err(Error::Config(format!(
                "payload n-gram range {}..={} must lie within 2..=8",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

pub fn tokenize_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn featurize_text(text: &str, config: &TextFeaturizerConfig) -> Result<FeatureVector> {
    if config.dim < 2 {
        return Err(Error::Config(format!("text dim must be >= 2, got {}", config.dim)));
    }
    let words = tokenize_words(text);
    let mut entries = Vec::with_capacity(words.len() * 2);
    for w in &words {
        entries.push(hash_token(w.as_bytes(), config.dim));
    }
    for pair in words.windows(2) {
        let bigram = format!("{} {}", pair[0], pair[1]);
        entries.push(hash_token(bigram.as_bytes(), config.dim));
    }
    if entries.is_empty() {
        return Ok(FeatureVector::zeros(config.dim));
    }
    let scale = 1.0 / (entries.len() as f64).sqrt();
    FeatureVector::from_entries(
        config.dim,
        entries.into_iter().map(|(i, s)| (i, s * scale)).collect(),
    )
}

fn push_ngrams(bytes: &[u8], config: &PayloadFeaturizerConfig, offset: usize, out: &mut Vec<(usize, f64)>) {
    let half = config.dim / 2;
    for n in config.ngram_min..=config.ngram_max {
        for gram in bytes.windows(n) {
            let (bucket, sign) = hash_token(gram, half);
            out.push((offset + bucket, sign));
        }
    }
}

pub fn featurize_payload(sample: &HttpSample, config: &PayloadFeaturizerConfig) -> Result<FeatureVector> {
    config.validate()?;
    let mut entries = Vec::new();
    push_ngrams(&sample.request, config, 0, &mut entries);
    if let Some(response) = &sample.response {
        push_ngrams(response, config, config.dim / 2, &mut entries);
    }
    let v = FeatureVector::from_entries(config.dim, entries)?;
    let norm = v.norm();
    Ok(if norm > 0.0 { v.scaled(1.0 / norm) } else { v })
}

/// Which featurizer an encoder was trained with. Stored in checkpoints so
/// inference reproduces training features exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeaturizerConfig {
    Text(TextFeaturizerConfig),
    Payload(PayloadFeaturizerConfig),
}

impl FeaturizerConfig {
    pub fn dim(&self) -> usize {
        match self {
            FeaturizerConfig::Text(c) => c.dim,
            FeaturizerConfig::Payload(c) => c.dim,
        }
    }

    /// Featurizes raw sample bytes: text is decoded lossily as UTF-8,
    /// payloads are split into request and response first.
    pub fn featurize(&self, raw: &[u8]) -> Result<FeatureVector> {
        match self {
            FeaturizerConfig::Text(c) => featurize_text(&String::from_utf8_lossy(raw), c),
            FeaturizerConfig::Payload(c) => featurize_payload(&parse_http_sample(raw)?, c),
        }
    }
}

impl fmt::Display for FeaturizerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeaturizerConfig::Text(c) => write!(f, "text(dim={})", c.dim),
            FeaturizerConfig::Payload(c) => {
                write!(f, "payload(dim={}, n={}..={})", c.dim, c.ngram_min, c.ngram_max)
            }
        }
    }
}
