use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::featurize::FeatureVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Terms in fewer documents are dropped.
    pub min_df: usize,
    /// Keep at most this many terms, highest document frequency first.
    pub max_features: Option<usize>,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            ngram_min: 3,
            ngram_max: 4,
            min_df: 1,
            max_features: Some(20_000),
        }
    }
}

/// Byte n-gram vocabulary with smoothed inverse document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub config: TfidfConfig,
    /// Terms in index order (sorted bytewise).
    terms: Vec<Vec<u8>>,
    idf: Vec<f64>,
    #[serde(skip)]
    lookup: HashMap<Vec<u8>, u32>,
}

fn grams<'a>(doc: &'a [u8], config: &TfidfConfig) -> impl Iterator<Item = &'a [u8]> + 'a {
    let (lo, hi) = (config.ngram_min, config.ngram_max);
    (lo..=hi).flat_map(move |n| doc.windows(n))
}

impl TfidfModel {
    /// idf(t) = ln((1 + N) / (1 + df(t))) + 1.
    pub fn fit(docs: &[&[u8]], config: TfidfConfig) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("TF-IDF needs at least one document".into()));
        }
        if config.ngram_min == 0 || config.ngram_min > config.ngram_max {
            return Err(Error::Config(format!(
                "bad n-gram range {}..={}",
                config.ngram_min, config.ngram_max
            )));
        }
        let mut df: HashMap<&[u8], usize> = HashMap::new();
        for doc in docs {
            let mut seen: Vec<&[u8]> = grams(doc, &config).collect();
            seen.sort_unstable();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&[u8], usize)> = df.into_iter().filter(|&(_, d)| d >= config.min_df).collect();
        if let Some(max) = config.max_features {
            kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            kept.truncate(max);
        }
        if kept.is_empty() {
            return Err(Error::Validation("TF-IDF vocabulary is empty after pruning".into()));
        }
        kept.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let n = docs.len() as f64;
        let idf = kept.iter().map(|&(_, d)| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        let terms: Vec<Vec<u8>> = kept.into_iter().map(|(t, _)| t.to_vec()).collect();
        let mut model = TfidfModel {
            config,
            terms,
            idf,
            lookup: HashMap::new(),
        };
        model.rebuild_lookup();
        Ok(model)
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    /// Restores the term lookup after deserialization.
    pub fn restore(mut self) -> Self {
        self.rebuild_lookup();
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn idf(&self, term: &[u8]) -> Option<f64> {
        self.lookup.get(term).map(|&i| self.idf[i as usize])
    }

    /// Raw counts times idf, L2-normalized. Unknown n-grams are ignored.
    pub fn transform(&self, doc: &[u8]) -> Result<FeatureVector> {
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for g in grams(doc, &self.config) {
            if let Some(&i) = self.lookup.get(g) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(i, c)| (i as usize, c * self.idf[i as usize]))
            .collect();
        let v = FeatureVector::from_entries(self.terms.len(), entries)?;
        let norm = v.norm();
        Ok(if norm > 0.0 { v.scaled(1.0 / norm) } else { v })
    }

    pub fn transform_all(&self, docs: &[&[u8]]) -> Result<Vec<FeatureVector>> {
        use rayon::prelude::*;
        docs.par_iter().map(|d| self.transform(d)).collect()
    }
}
