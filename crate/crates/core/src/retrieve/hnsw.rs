//! Hierarchical navigable small-world graph over unit vectors with cosine
//! distance. Insertion follows the usual layered construction: greedy
//! descent through the upper layers, a beam search of width
//! `ef_construction` on each layer the new point joins, and the
//! diversity heuristic (keeping pruned candidates to fill up) to choose
//! neighbours. Layer 0 allows `2 * m` links, upper layers `m`.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "SALMHNSW" | u32 version | u64 header length | JSON header
//! | f64 vectors (count * dim) | u32 labels (count)
//! | per node: u32 level, then per layer 0..=level: u32 n, n * u32 ids
//! | SHA-256 of everything before
//! ```

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ClassId;
use crate::nn::{dot, write_atomic};
use crate::{rng, Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"SALMHNSW";
pub const INDEX_VERSION: u32 = 1;
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Seeds the level draw.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0,
        }
    }
}

impl HnswParams {
    fn validate(&self) -> Result<()> {
        if self.m < 2 || self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::Config("HNSW needs m >= 2 and positive ef values".into()));
        }
        Ok(())
    }
}

/// Distance-ordered candidate; ties fall back to the id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    dist: f64,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnIndex {
    dim: usize,
    params: HnswParams,
    vectors: Vec<f64>,
    labels: Vec<ClassId>,
    /// `links[node][layer]`
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let n = dot(v, v).sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Validation(format!("{what} has norm {n}, expected a unit vector")));
    }
    Ok(())
}

impl AnnIndex {
    /// Builds an index over `vectors` (one unit vector per row) in order.
    pub fn build(vectors: &[Vec<f64>], labels: &[ClassId], params: HnswParams) -> Result<Self> {
        params.validate()?;
        if vectors.is_empty() {
            return Err(Error::Empty("HNSW index needs at least one vector".into()));
        }
        if vectors.len() != labels.len() {
            return Err(Error::Shape(format!("{} vectors but {} labels", vectors.len(), labels.len())));
        }
        if vectors.len() > u32::MAX as usize {
            return Err(Error::Config("too many vectors for a u32-addressed index".into()));
        }
        let dim = vectors[0].len();
        let mut flat = Vec::with_capacity(vectors.len() * dim);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Shape(format!("vector {i} has dim {}, expected {dim}", v.len())));
            }
            check_unit(v, &format!("vector {i}"))?;
            flat.extend_from_slice(v);
        }
        let mut index = AnnIndex {
            dim,
            params,
            vectors: flat,
            labels: labels.to_vec(),
            links: Vec::with_capacity(vectors.len()),
            entry: 0,
            max_level: 0,
        };
        let ml = 1.0 / (params.m as f64).ln();
        let mut rng = rng::seeded(params.seed);
        for id in 0..vectors.len() {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let level = (-u.ln() * ml).floor() as usize;
            index.insert(id as u32, level);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn label(&self, id: usize) -> ClassId {
        self.labels[id]
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    /// Number of nodes present on `layer`.
    pub fn layer_size(&self, layer: usize) -> usize {
        self.links.iter().filter(|l| l.len() > layer).count()
    }

    fn dist_to(&self, q: &[f64], id: u32) -> f64 {
        1.0 - dot(q, self.vector(id as usize))
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, id: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        if id == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let q = self.vector(id as usize).to_vec();
        let mut ep = vec![Cand {
            dist: self.dist_to(&q, self.entry),
            id: self.entry,
        }];
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.search_layer(&q, &ep, 1, layer);
        }
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &ep, self.params.ef_construction, layer);
            let chosen = self.select_neighbors(&found, self.params.m.min(self.max_links(layer)));
            self.links[id as usize][layer] = chosen.iter().map(|c| c.id).collect();
            for c in &chosen {
                self.connect(c.id, id, layer);
            }
            ep = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    /// Adds `to` to the links of `from` on `layer`, re-selecting with the
    /// heuristic when the list overflows.
    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.max_links(layer);
        self.links[from as usize][layer].push(to);
        if self.links[from as usize][layer].len() <= cap {
            return;
        }
        let base = self.vector(from as usize).to_vec();
        let mut cands: Vec<Cand> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Cand {
                dist: self.dist_to(&base, n),
                id: n,
            })
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, cap);
        self.links[from as usize][layer] = kept.iter().map(|c| c.id).collect();
    }

    /// Diversity heuristic over candidates sorted by distance to the base
    /// point: keep a candidate only if it is closer to the base than to every
    /// neighbour kept so far; fill remaining slots with the discarded ones.
    fn select_neighbors(&self, sorted: &[Cand], m: usize) -> Vec<Cand> {
        let mut kept: Vec<Cand> = Vec::with_capacity(m);
        let mut discarded = Vec::new();
        for &c in sorted {
            if kept.len() >= m {
                break;
            }
            let v = self.vector(c.id as usize);
            if kept.iter().all(|k| c.dist < self.dist_to(v, k.id)) {
                kept.push(c);
            } else {
                discarded.push(c);
            }
        }
        for c in discarded {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    /// Beam search on one layer; returns up to `ef` nearest found, ascending.
    fn search_layer(&self, q: &[f64], entry: &[Cand], ef: usize, layer: usize) -> Vec<Cand> {
        let mut visited = vec![false; self.len()];
        let mut candidates: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut found: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in entry {
            if !visited[e.id as usize] {
                visited[e.id as usize] = true;
                candidates.push(Reverse(e));
                found.push(e);
            }
        }
        while found.len() > ef {
            found.pop();
        }
        while let Some(Reverse(c)) = candidates.pop() {
            let worst = found.peek().expect("found is non-empty");
            if found.len() >= ef && c.dist > worst.dist {
                break;
            }
            for &n in &self.links[c.id as usize][layer] {
                if visited[n as usize] {
                    continue;
                }
                visited[n as usize] = true;
                let cand = Cand {
                    dist: self.dist_to(q, n),
                    id: n,
                };
                if found.len() < ef || cand < *found.peek().expect("found is non-empty") {
                    candidates.push(Reverse(cand));
                    found.push(cand);
                    if found.len() > ef {
                        found.pop();
                    }
                }
            }
        }
        let mut out = found.into_vec();
        out.sort();
        out
    }

    /// The `k` stored points nearest to `q`, ascending by (distance, id).
    /// With `ef_search >= len()` every point is scanned, so the result is exact.
    pub fn query(&self, q: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(Error::Empty("HNSW index is empty".into()));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!("k must lie in 1..={}, got {k}", self.len())));
        }
        if q.len() != self.dim {
            return Err(Error::Shape(format!("query has dim {}, index has {}", q.len(), self.dim)));
        }
        check_unit(q, "query")?;
        let hits = if self.params.ef_search >= self.len() {
            let mut all: Vec<Cand> = (0..self.len() as u32)
                .map(|id| Cand {
                    dist: self.dist_to(q, id),
                    id,
                })
                .collect();
            all.sort();
            all
        } else {
            let mut ep = vec![Cand {
                dist: self.dist_to(q, self.entry),
                id: self.entry,
            }];
            for layer in (1..=self.max_level).rev() {
                ep = self.search_layer(q, &ep, 1, layer);
            }
            self.search_layer(q, &ep, self.params.ef_search.max(k), 0)
        };
        Ok(hits.into_iter().take(k).map(|c| (c.id as usize, c.dist)).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            dim: self.dim,
            count: self.len(),
            params: self.params,
            entry: self.entry,
            max_level: self.max_level,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.0.to_le_bytes());
        }
        for node in &self.links {
            out.extend_from_slice(&((node.len() - 1) as u32).to_le_bytes());
            for layer in node {
                out.extend_from_slice(&(layer.len() as u32).to_le_bytes());
                for n in layer {
                    out.extend_from_slice(&n.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(format!("index: {m}"));
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != INDEX_MAGIC {
            return Err(corrupt("bad magic or truncated file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: INDEX_VERSION,
            });
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| corrupt(&e.to_string()))?;
        let mut vectors = Vec::with_capacity(header.count * header.dim);
        for _ in 0..header.count * header.dim {
            vectors.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        let mut labels = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            labels.push(ClassId(r.u32()?));
        }
        let mut links = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let level = r.u32()? as usize;
            let mut node = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let n = r.u32()? as usize;
                let mut layer = Vec::with_capacity(n);
                for _ in 0..n {
                    let id = r.u32()?;
                    if id as usize >= header.count {
                        return Err(corrupt("link out of range"));
                    }
                    layer.push(id);
                }
                node.push(layer);
            }
            links.push(node);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        if header.count == 0 || header.entry as usize >= header.count {
            return Err(corrupt("bad entry point"));
        }
        Ok(AnnIndex {
            dim: header.dim,
            params: header.params,
            vectors,
            labels,
            links,
            entry: header.entry,
            max_level: header.max_level,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    params: HnswParams,
    entry: u32,
    max_level: usize,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("index: truncated body".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Uniform random unit vectors (normalized Gaussians).
pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Exact k nearest by scanning, ascending by (distance, id).
pub fn brute_force(vectors: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = vectors.iter().enumerate().map(|(i, v)| (i, 1.0 - dot(q, v))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<ClassId> {
        (0..n).map(|i| ClassId(i as u32 % 5 + 1)).collect()
    }

    #[test]
    fn single_vector_index() {
        let v = random_unit_vectors(1, 8, 1);
        let idx = AnnIndex::build(&v, &labels(1), HnswParams::default()).unwrap();
        let q = random_unit_vectors(1, 8, 2).remove(0);
        let hits = idx.query(&q, 1).unwrap();
        assert_eq!(hits, vec![(0, 1.0 - dot(&q, &v[0]))]);
    }

    #[test]
    fn stored_vector_is_its_own_nearest() {
        let v = random_unit_vectors(500, 16, 3);
        let idx = AnnIndex::build(&v, &labels(500), HnswParams::default()).unwrap();
        for i in (0..500).step_by(37) {
            let hits = idx.query(&v[i], 5).unwrap();
            assert_eq!(hits[0].0, brute_force(&v, &v[i], 1)[0].0);
            assert_eq!(hits[0].0, i);
            assert!(hits[0].1.abs() < 1e-12);
        }
    }

    #[test]
    fn layer_zero_holds_every_point_and_results_are_sorted() {
        let v = random_unit_vectors(300, 8, 4);
        let idx = AnnIndex::build(&v, &labels(300), HnswParams::default()).unwrap();
        assert_eq!(idx.layer_size(0), 300);
        assert!(idx.layer_size(1) < 300);
        let hits = idx.query(&v[0], 10).unwrap();
        assert!(hits.windows(2).all(|w| w[0].1 <= w[1].1));
        for node in &idx.links {
            for (layer, l) in node.iter().enumerate() {
                assert!(l.len() <= idx.max_links(layer));
            }
        }
    }

    #[test]
    fn exhaustive_ef_is_exact() {
        let v = random_unit_vectors(400, 12, 5);
        let mut idx = AnnIndex::build(&v, &labels(400), HnswParams::default()).unwrap();
        idx.set_ef_search(400);
        for q in random_unit_vectors(20, 12, 6) {
            assert_eq!(idx.query(&q, 10).unwrap(), brute_force(&v, &q, 10));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(AnnIndex::build(&[], &[], HnswParams::default()), Err(Error::Empty(_))));
        let v = random_unit_vectors(3, 4, 7);
        let idx = AnnIndex::build(&v, &labels(3), HnswParams::default()).unwrap();
        assert!(idx.query(&v[0], 0).is_err());
        assert!(idx.query(&v[0], 4).is_err());
        assert!(idx.query(&[1.0, 1.0, 0.0, 0.0], 1).is_err());
        assert!(AnnIndex::build(&[vec![2.0, 0.0]], &labels(1), HnswParams::default()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = random_unit_vectors(200, 8, 8);
        let idx = AnnIndex::build(&v, &labels(200), HnswParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.hnsw");
        idx.save(&path).unwrap();
        let back = AnnIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        let mut bytes = fs::read(&path).unwrap();
        bytes[40] ^= 1;
        assert!(matches!(AnnIndex::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn build_is_deterministic() {
        let v = random_unit_vectors(300, 8, 9);
        let a = AnnIndex::build(&v, &labels(300), HnswParams::default()).unwrap();
        let b = AnnIndex::build(&v, &labels(300), HnswParams::default()).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }
}
