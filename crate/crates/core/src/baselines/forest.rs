//! Bagged CART trees with Gini impurity over sparse feature vectors.
//!
//! Splits send `x <= threshold` left, and thresholds are always a value seen
//! in training, so the fitted partition depends only on feature order.
//! Candidate features are drawn without replacement until the per-split
//! budget of non-constant features is met. Features that are all zero in a
//! node are constant there, so for small nodes the draw switches to the union
//! of features present in the node's rows instead of scanning columns.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::featurize::FeatureVector;
use crate::{rng, Error, Result};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means the square root of the width.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 16,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { dist: Vec<f64> },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &FeatureVector) -> &[f64] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x.get(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub config: ForestConfig,
    pub seed: u64,
    pub dim: usize,
    /// Class ids in leaf-distribution order.
    pub classes: Vec<ClassId>,
    pub trees: Vec<Tree>,
}

struct Data<'a> {
    rows: &'a [FeatureVector],
    /// Per feature: (row, value) of the non-zero entries, rows ascending.
    columns: Vec<Vec<(u32, f64)>>,
    targets: Vec<usize>,
    n_classes: usize,
}

struct Candidate {
    feature: u32,
    threshold: f64,
    score: f64,
}

struct Grower<'a, 'b> {
    data: &'b Data<'a>,
    config: &'b ForestConfig,
    mtry: usize,
    weight: Vec<f64>,
    in_node: Vec<bool>,
    perm: Vec<u32>,
    drawn: Vec<bool>,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

fn gini_score(counts: &[f64], total: f64) -> f64 {
    // total * gini = total - sum(c^2) / total
    if total <= 0.0 {
        return 0.0;
    }
    total - counts.iter().map(|c| c * c).sum::<f64>() / total
}

impl<'a, 'b> Grower<'a, 'b> {
    fn class_counts(&self, rows: &[u32]) -> Vec<f64> {
        let mut counts = vec![0.0; self.data.n_classes];
        for &r in rows {
            counts[self.data.targets[r as usize]] += self.weight[r as usize];
        }
        counts
    }

    /// Best threshold for one feature, or `None` if it is constant in the node.
    fn evaluate(&self, feature: u32, mut entries: Vec<(f64, u32)>, node_rows: usize, counts: &[f64]) -> Option<Candidate> {
        let n_classes = self.data.n_classes;
        if entries.is_empty() {
            return None;
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let zeros = node_rows - entries.len();
        if zeros == 0 && entries[0].0 == entries[entries.len() - 1].0 {
            return None;
        }
        // Zero block class counts.
        let mut zero_counts = counts.to_vec();
        for &(_, r) in &entries {
            zero_counts[self.data.targets[r as usize]] -= self.weight[r as usize];
        }
        // Sequence of (value, class counts delta) groups in ascending value order.
        let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut zero_done = zeros == 0;
        let push = |groups: &mut Vec<(f64, Vec<f64>)>, v: f64, cls: usize, w: f64| match groups.last_mut() {
            Some((last, c)) if *last == v => c[cls] += w,
            _ => {
                let mut c = vec![0.0; n_classes];
                c[cls] += w;
                groups.push((v, c));
            }
        };
        for &(v, r) in &entries {
            if !zero_done && v > 0.0 {
                groups.push((0.0, zero_counts.clone()));
                zero_done = true;
            }
            push(&mut groups, v, self.data.targets[r as usize], self.weight[r as usize]);
        }
        if !zero_done {
            groups.push((0.0, zero_counts.clone()));
        }
        if groups.len() < 2 {
            return None;
        }
        let total: f64 = counts.iter().sum();
        let mut left = vec![0.0; n_classes];
        let mut left_w = 0.0;
        let mut best: Option<Candidate> = None;
        for g in 0..groups.len() - 1 {
            for (l, d) in left.iter_mut().zip(&groups[g].1) {
                *l += d;
            }
            left_w += groups[g].1.iter().sum::<f64>();
            let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
            let score = gini_score(&left, left_w) + gini_score(&right, total - left_w);
            if best.as_ref().map_or(true, |b| score < b.score) {
                best = Some(Candidate {
                    feature,
                    threshold: groups[g].0,
                    score,
                });
            }
        }
        best
    }

    fn column_entries(&self, feature: u32) -> Vec<(f64, u32)> {
        self.data.columns[feature as usize]
            .iter()
            .filter(|(r, _)| self.in_node[*r as usize])
            .map(|&(r, v)| (v, r))
            .collect()
    }

    fn best_split(&mut self, rows: &[u32], counts: &[f64]) -> Option<Candidate> {
        let dim = self.perm.len();
        let row_cost: usize = rows.iter().map(|&r| self.data.rows[r as usize].nnz()).sum();
        for &r in rows {
            self.in_node[r as usize] = true;
        }
        let mut best: Option<Candidate> = None;
        let mut found = 0;
        let mut drawn = 0;
        let mut spent = 0;
        let consider = |best: &mut Option<Candidate>, c: Candidate| {
            if best.as_ref().map_or(true, |b| c.score < b.score) {
                *best = Some(c);
            }
        };
        while found < self.mtry && drawn < dim && spent <= row_cost {
            let j = self.rng.gen_range(drawn..dim);
            self.perm.swap(drawn, j);
            let f = self.perm[drawn];
            drawn += 1;
            self.drawn[f as usize] = true;
            spent += self.data.columns[f as usize].len();
            let entries = self.column_entries(f);
            if let Some(c) = self.evaluate(f, entries, rows.len(), counts) {
                found += 1;
                consider(&mut best, c);
            }
        }
        if found < self.mtry && drawn < dim {
            // Remaining non-constant features are among those present in the node.
            let mut present: BTreeMap<u32, Vec<(f64, u32)>> = BTreeMap::new();
            for &r in rows {
                for (f, v) in self.data.rows[r as usize].iter() {
                    if !self.drawn[f] {
                        present.entry(f as u32).or_default().push((v, r));
                    }
                }
            }
            let mut pool: Vec<(u32, Vec<(f64, u32)>)> = present.into_iter().collect();
            let mut i = 0;
            while found < self.mtry && i < pool.len() {
                let j = self.rng.gen_range(i..pool.len());
                pool.swap(i, j);
                let (f, entries) = std::mem::take(&mut pool[i]);
                i += 1;
                if let Some(c) = self.evaluate(f, entries, rows.len(), counts) {
                    found += 1;
                    consider(&mut best, c);
                }
            }
        }
        for &r in rows {
            self.in_node[r as usize] = false;
        }
        for &f in &self.perm[..drawn] {
            self.drawn[f as usize] = false;
        }
        best
    }

    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> u32 {
        let counts = self.class_counts(&rows);
        let total: f64 = counts.iter().sum();
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            dist: counts.iter().map(|c| c / total).collect(),
        });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if depth >= self.config.max_depth || pure || total < 2.0 {
            return id;
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return id;
        };
        let (l, r): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&row| self.data.rows[row as usize].get(split.feature as usize) <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

impl ForestModel {
    pub fn train(features: &[FeatureVector], labels: &[ClassId], config: ForestConfig, seed: u64) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("forest needs at least one training row".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", features.len(), labels.len())));
        }
        if config.n_trees == 0 || config.max_depth == 0 {
            return Err(Error::Config("forest needs n_trees >= 1 and max_depth >= 1".into()));
        }
        let dim = features[0].dim();
        if let Some(i) = features.iter().position(|f| f.dim() != dim) {
            return Err(Error::Shape(format!("row {i} has dim {}, expected {dim}", features[i].dim())));
        }
        let mut classes: Vec<ClassId> = labels.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            log::warn!("forest training set has a single class {}; the model is constant", classes[0]);
            return Ok(ForestModel {
                version: FOREST_FORMAT_VERSION,
                config,
                seed,
                dim,
                classes,
                trees: vec![Tree {
                    nodes: vec![Node::Leaf { dist: vec![1.0] }],
                }],
            });
        }
        let targets: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("label is present")).collect();
        let mut columns: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
        for (r, row) in features.iter().enumerate() {
            for (f, v) in row.iter() {
                columns[f].push((r as u32, v));
            }
        }
        let data = Data {
            rows: features,
            columns,
            targets,
            n_classes: classes.len(),
        };
        let mtry = config
            .features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().round() as usize)
            .clamp(1, dim.max(1));
        let n = features.len();
        let trees: Vec<Tree> = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut tree_rng = rng::derived(seed, t as u64);
                let mut weight = vec![0.0; n];
                if config.bootstrap {
                    for _ in 0..n {
                        weight[tree_rng.gen_range(0..n)] += 1.0;
                    }
                } else {
                    weight.iter_mut().for_each(|w| *w = 1.0);
                }
                let rows: Vec<u32> = (0..n as u32).filter(|&r| weight[r as usize] > 0.0).collect();
                let mut grower = Grower {
                    data: &data,
                    config: &config,
                    mtry,
                    weight,
                    in_node: vec![false; n],
                    perm: (0..dim as u32).collect(),
                    drawn: vec![false; dim],
                    rng: tree_rng,
                    nodes: Vec::new(),
                };
                grower.grow(rows, 0);
                Tree { nodes: grower.nodes }
            })
            .collect();
        Ok(ForestModel {
            version: FOREST_FORMAT_VERSION,
            config,
            seed,
            dim,
            classes,
            trees,
        })
    }

    /// Mean of the leaf distributions reached by `x`, in `classes` order.
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::Shape(format!("input has dim {}, forest expects {}", x.dim(), self.dim)));
        }
        let mut mean = vec![0.0; self.classes.len()];
        for tree in &self.trees {
            for (m, p) in mean.iter_mut().zip(tree.leaf(x)) {
                *m += p;
            }
        }
        let inv = 1.0 / self.trees.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        Ok(mean)
    }

    /// Argmax of the averaged distributions; ties go to the lowest class id.
    pub fn predict(&self, x: &FeatureVector) -> Result<ClassId> {
        let p = self.predict_proba(x)?;
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        Ok(self.classes[best])
    }

    pub fn predict_all(&self, xs: &[FeatureVector]) -> Result<Vec<ClassId>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != FOREST_FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: self.version,
                expected: FOREST_FORMAT_VERSION,
            });
        }
        Ok(())
    }
}
