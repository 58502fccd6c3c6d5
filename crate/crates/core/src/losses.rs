//! Training objectives, each returning its value together with gradients
//! with respect to the embeddings (or logits) it was given.
//!
//! * triplet: mean over triplets of `max(0, d(a,p) - d(a,n) + margin)`.
//!   This is the summed hinge divided by the batch size, so learning-rate
//!   semantics do not depend on how many triplets a batch holds.
//! * multiple negatives ranking (MNRL): row `i` of the scaled similarity
//!   matrix `scale * A P^T` is a softmax over every positive in the batch
//!   with target `i`; the loss is the mean cross-entropy.
//! * cached MNRL: the same loss over a large batch computed with two passes
//!   so that only one micro-batch of activations is alive at a time.
//! * alignment: mean squared distance between student and teacher
//!   embeddings; only the student receives a gradient.

use serde::{Deserialize, Serialize};

use crate::featurize::FeatureVector;
use crate::nn::{axpy, dot, Encoder, Gradients, Matrix};
use crate::{Error, Result};

/// Unit-norm tolerance for cosine distances.
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `1 - a.b` on unit vectors.
    CosineDistance,
    /// `|a - b|^2`
    SquaredEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletLossConfig {
    pub margin: f64,
    pub distance: Distance,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        TripletLossConfig {
            margin: 0.2,
            distance: Distance::CosineDistance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TripletOutput {
    pub loss: f64,
    pub grad_anchors: Matrix,
    pub grad_positives: Matrix,
    pub grad_negatives: Matrix,
    /// Per triplet: hinge argument strictly positive.
    pub active: Vec<bool>,
    /// Some hinge argument is exactly zero; the subgradient 0 was used.
    pub at_kink: bool,
}

fn check_same_shape(name: &str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{name}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_unit_rows(name: &str, m: &Matrix) -> Result<()> {
    for (i, row) in m.iter_rows().enumerate() {
        let n = dot(row, row).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::Validation(format!("{name} row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

/// Distance and its gradients with respect to both arguments.
fn distance_with_grads(kind: Distance, a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    match kind {
        Distance::CosineDistance => (
            1.0 - dot(a, b),
            b.iter().map(|v| -v).collect(),
            a.iter().map(|v| -v).collect(),
        ),
        Distance::SquaredEuclidean => {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let d = dot(&diff, &diff);
            let ga: Vec<f64> = diff.iter().map(|v| 2.0 * v).collect();
            let gb: Vec<f64> = diff.iter().map(|v| -2.0 * v).collect();
            (d, ga, gb)
        }
    }
}

pub fn triplet_loss(
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    config: &TripletLossConfig,
) -> Result<TripletOutput> {
    check_same_shape("anchors/positives", anchors, positives)?;
    check_same_shape("anchors/negatives", anchors, negatives)?;
    let b = anchors.rows();
    if b == 0 {
        return Err(Error::Empty("triplet batch".into()));
    }
    if !config.margin.is_finite() {
        return Err(Error::Config("triplet margin must be finite".into()));
    }
    if config.distance == Distance::CosineDistance {
        check_unit_rows("anchors", anchors)?;
        check_unit_rows("positives", positives)?;
        check_unit_rows("negatives", negatives)?;
    }
    let (rows, cols) = anchors.shape();
    let mut out = TripletOutput {
        loss: 0.0,
        grad_anchors: Matrix::zeros(rows, cols),
        grad_positives: Matrix::zeros(rows, cols),
        grad_negatives: Matrix::zeros(rows, cols),
        active: Vec::with_capacity(b),
        at_kink: false,
    };
    let inv = 1.0 / b as f64;
    for i in 0..b {
        let (a, p, n) = (anchors.row(i), positives.row(i), negatives.row(i));
        let (d_ap, ga_p, gp) = distance_with_grads(config.distance, a, p);
        let (d_an, ga_n, gn) = distance_with_grads(config.distance, a, n);
        let hinge = d_ap - d_an + config.margin;
        out.at_kink |= hinge == 0.0;
        let active = hinge > 0.0;
        out.active.push(active);
        if active {
            out.loss += hinge * inv;
            axpy(inv, &ga_p, out.grad_anchors.row_mut(i));
            axpy(-inv, &ga_n, out.grad_anchors.row_mut(i));
            axpy(inv, &gp, out.grad_positives.row_mut(i));
            axpy(-inv, &gn, out.grad_negatives.row_mut(i));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnrlConfig {
    /// Similarity scale (inverse temperature).
    pub scale: f64,
    pub micro_batch: usize,
    pub effective_batch: usize,
}

impl Default for MnrlConfig {
    fn default() -> Self {
        MnrlConfig {
            scale: 20.0,
            micro_batch: 32,
            effective_batch: 256,
        }
    }
}

impl MnrlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("MNRL scale must be > 0, got {}", self.scale)));
        }
        if self.micro_batch == 0 || self.effective_batch == 0 || self.effective_batch % self.micro_batch != 0 {
            return Err(Error::Config(format!(
                "effective batch {} must be a positive multiple of micro batch {}",
                self.effective_batch, self.micro_batch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MnrlOutput {
    pub loss: f64,
    pub grad_anchors: Matrix,
    pub grad_positives: Matrix,
}

pub fn mnrl_loss(anchors: &Matrix, positives: &Matrix, scale: f64) -> Result<MnrlOutput> {
    check_same_shape("anchors/positives", anchors, positives)?;
    let b = anchors.rows();
    if b == 0 {
        return Err(Error::Empty("MNRL batch".into()));
    }
    let (rows, cols) = anchors.shape();
    let mut grad_anchors = Matrix::zeros(rows, cols);
    let mut grad_positives = Matrix::zeros(rows, cols);
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        let a = anchors.row(i);
        let logits: Vec<f64> = (0..b).map(|j| scale * dot(a, positives.row(j))).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        loss += (max + sum.ln() - logits[i]) * inv;
        for j in 0..b {
            let p = (logits[j] - max).exp() / sum;
            let d = (p - if i == j { 1.0 } else { 0.0 }) * inv * scale;
            if d != 0.0 {
                axpy(d, positives.row(j), grad_anchors.row_mut(i));
                axpy(d, a, grad_positives.row_mut(j));
            }
        }
    }
    Ok(MnrlOutput {
        loss,
        grad_anchors,
        grad_positives,
    })
}

/// MNRL over `anchors.len()` pairs with gradient caching. Pass 1 embeds every
/// micro-batch without keeping activations; the full-batch loss and its
/// embedding gradients are computed on those cached embeddings; pass 2
/// re-runs each micro-batch with activations and back-propagates its slice
/// of the cached gradient. The parameter gradients equal those of a single
/// full-batch pass.
pub fn cached_mnrl_step(
    encoder: &Encoder,
    anchors: &[FeatureVector],
    positives: &[FeatureVector],
    config: &MnrlConfig,
) -> Result<(f64, Gradients)> {
    config.validate()?;
    if anchors.len() != positives.len() {
        return Err(Error::Shape(format!(
            "{} anchors but {} positives",
            anchors.len(),
            positives.len()
        )));
    }
    if anchors.is_empty() {
        return Err(Error::Empty("MNRL batch".into()));
    }
    let micro = config.micro_batch;
    let embed_all = |inputs: &[FeatureVector]| -> Result<Matrix> {
        let parts = inputs
            .chunks(micro)
            .map(|chunk| encoder.encode(chunk))
            .collect::<Result<Vec<_>>>()?;
        Matrix::vstack(&parts)
    };
    let anchor_emb = embed_all(anchors)?;
    let positive_emb = embed_all(positives)?;
    let out = mnrl_loss(&anchor_emb, &positive_emb, config.scale)?;

    let mut grads = Gradients::zeros_like(encoder);
    for (inputs, upstream) in [(anchors, &out.grad_anchors), (positives, &out.grad_positives)] {
        for (k, chunk) in inputs.chunks(micro).enumerate() {
            let start = k * micro;
            let cache = encoder.forward(chunk)?;
            if cache.embeddings().shape() != (chunk.len(), upstream.cols()) {
                return Err(Error::Shape("cached embedding / feature count mismatch".into()));
            }
            encoder.backward_into(&cache, &upstream.slice_rows(start, start + chunk.len()), &mut grads)?;
        }
    }
    Ok((out.loss, grads))
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub loss: f64,
    /// Gradient on the student embeddings. The teacher is frozen and gets none.
    pub grad_student: Matrix,
}

pub fn mse_align_loss(student: &Matrix, teacher: &Matrix) -> Result<AlignOutput> {
    check_same_shape("student/teacher", student, teacher)?;
    let m = student.rows();
    if m == 0 {
        return Err(Error::Empty("alignment batch".into()));
    }
    let inv = 1.0 / m as f64;
    let mut grad_student = Matrix::zeros(m, student.cols());
    let mut loss = 0.0;
    for i in 0..m {
        let mut sq = 0.0;
        for (g, (s, t)) in grad_student
            .row_mut(i)
            .iter_mut()
            .zip(student.row(i).iter().zip(teacher.row(i)))
        {
            let d = s - t;
            sq += d * d;
            *g = 2.0 * d * inv;
        }
        loss += sq * inv;
    }
    Ok(AlignOutput { loss, grad_student })
}

#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub loss: f64,
    pub grad_logits: Matrix,
}

/// Mean softmax cross-entropy of `logits` rows against class indices.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<CrossEntropyOutput> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!("{} logit rows for {} targets", logits.rows(), targets.len())));
    }
    if targets.is_empty() {
        return Err(Error::Empty("cross-entropy batch".into()));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::Validation(format!("target {t} outside {} classes", logits.cols())));
    }
    let inv = 1.0 / targets.len() as f64;
    let mut grad_logits = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|l| (l - max).exp()).sum();
        loss += (max + sum.ln() - row[t]) * inv;
        for (j, g) in grad_logits.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - max).exp() / sum;
            *g = (p - if j == t { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok(CrossEntropyOutput { loss, grad_logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, EncoderConfig};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_rows(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = rng::seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = dot(&v, &v).sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn satisfied_triplet_has_zero_loss() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let n = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let out = triplet_loss(&a, &a, &n, &TripletLossConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_anchors.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn equal_distances_cost_the_margin() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let n = Matrix::from_rows(&[vec![0.0, -1.0]]).unwrap();
        let out = triplet_loss(&a, &p, &n, &TripletLossConfig::default()).unwrap();
        assert_eq!(out.loss, 0.2);
    }

    #[test]
    fn triplet_rejects_empty_and_non_unit() {
        let empty = Matrix::zeros(0, 3);
        assert!(matches!(
            triplet_loss(&empty, &empty, &empty, &TripletLossConfig::default()),
            Err(Error::Empty(_))
        ));
        let bad = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert!(triplet_loss(&bad, &bad, &bad, &TripletLossConfig::default()).is_err());
    }

    #[test]
    fn mnrl_single_pair_is_zero() {
        let a = unit_rows(1, 4, 1);
        let p = unit_rows(1, 4, 2);
        assert_eq!(mnrl_loss(&a, &p, 20.0).unwrap().loss, 0.0);
        assert!(mnrl_loss(&Matrix::zeros(0, 4), &Matrix::zeros(0, 4), 20.0).is_err());
    }

    #[test]
    fn mnrl_orthogonal_closed_form() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        for s in [1.0, 5.0, 20.0] {
            let out = mnrl_loss(&a, &a, s).unwrap();
            let expected = (1.0 + (-s as f64).exp()).ln();
            assert!((out.loss - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_hand_values() {
        let s = Matrix::from_rows(&[vec![0.3, -0.4]]).unwrap();
        let t = Matrix::zeros(1, 2);
        let out = mse_align_loss(&s, &t).unwrap();
        assert!((out.loss - 0.25).abs() < 1e-15);
        assert_eq!(out.grad_student.row(0), &[0.6, -0.8]);
        assert_eq!(mse_align_loss(&s, &s).unwrap().loss, 0.0);
        assert!(mse_align_loss(&Matrix::zeros(0, 2), &Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        for k in [2usize, 5, 15] {
            let logits = Matrix::zeros(3, k);
            let out = softmax_cross_entropy(&logits, &[0, 1, k - 1]).unwrap();
            assert!((out.loss - (k as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn cached_equals_plain_when_micro_is_effective() {
        let enc = Encoder::new(EncoderConfig {
            input_dim: 30,
            hidden_dims: vec![12],
            embed_dim: 6,
            activation: Activation::Tanh,
            seed: 8,
        })
        .unwrap();
        let mut rng = rng::seeded(3);
        let mut feats = || -> Vec<FeatureVector> {
            (0..8)
                .map(|_| {
                    let d: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    FeatureVector::from_dense(&d).unwrap()
                })
                .collect()
        };
        let (a, p) = (feats(), feats());
        let config = MnrlConfig {
            scale: 20.0,
            micro_batch: 8,
            effective_batch: 8,
        };
        let (loss, cached) = cached_mnrl_step(&enc, &a, &p, &config).unwrap();

        let ca = enc.forward(&a).unwrap();
        let cp = enc.forward(&p).unwrap();
        let out = mnrl_loss(ca.embeddings(), cp.embeddings(), 20.0).unwrap();
        let mut plain = Gradients::zeros_like(&enc);
        enc.backward_into(&ca, &out.grad_anchors, &mut plain).unwrap();
        enc.backward_into(&cp, &out.grad_positives, &mut plain).unwrap();
        assert_eq!(loss, out.loss);
        assert_eq!(cached, plain);
    }

    #[test]
    fn mnrl_config_validation() {
        assert!(MnrlConfig { scale: 20.0, micro_batch: 3, effective_batch: 8 }.validate().is_err());
        assert!(MnrlConfig { scale: 0.0, micro_batch: 2, effective_batch: 8 }.validate().is_err());
        assert!(MnrlConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn mnrl_invariant_under_joint_permutation(seed in 0u64..1000, shift in 1usize..7) {
            let a = unit_rows(7, 5, seed);
            let p = unit_rows(7, 5, seed + 10_000);
            let perm: Vec<usize> = (0..7).map(|i| (i + shift) % 7).collect();
            let pa = Matrix::from_rows(&perm.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let pp = Matrix::from_rows(&perm.iter().map(|&i| p.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let l1 = mnrl_loss(&a, &p, 20.0).unwrap().loss;
            let l2 = mnrl_loss(&pa, &pp, 20.0).unwrap().loss;
            prop_assert!((l1 - l2).abs() < 1e-12);
        }

        #[test]
        fn triplet_nonnegative_and_zero_iff_satisfied(seed in 0u64..1000, margin in 0.0f64..1.0) {
            let a = unit_rows(6, 4, seed);
            let p = unit_rows(6, 4, seed + 1);
            let n = unit_rows(6, 4, seed + 2);
            let config = TripletLossConfig { margin, distance: Distance::CosineDistance };
            let out = triplet_loss(&a, &p, &n, &config).unwrap();
            prop_assert!(out.loss >= 0.0);
            let satisfied = (0..6).all(|i| {
                (1.0 - dot(a.row(i), n.row(i))) >= (1.0 - dot(a.row(i), p.row(i))) + margin
            });
            prop_assert_eq!(out.loss == 0.0, satisfied);
        }

        #[test]
        fn alignment_value_symmetric(seed in 0u64..1000) {
            let s = unit_rows(5, 3, seed);
            let t = unit_rows(5, 3, seed + 1);
            let st = mse_align_loss(&s, &t).unwrap().loss;
            let ts = mse_align_loss(&t, &s).unwrap().loss;
            prop_assert!((st - ts).abs() < 1e-15);
        }
    }
}
