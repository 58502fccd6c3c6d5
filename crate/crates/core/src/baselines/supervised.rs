use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::featurize::FeatureVector;
use crate::losses::softmax_cross_entropy;
use crate::nn::{dot, AdamW, AdamWConfig, Dense, Encoder, EpochRecord, Matrix};
use crate::pipeline::EarlyStop;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub early_stop: EarlyStop,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 20,
            lr: 1e-3,
            weight_decay: 0.01,
            batch: 32,
            early_stop: EarlyStop::default(),
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Linear map from embeddings to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub layer: Dense,
}

impl LinearHead {
    pub fn new(embed_dim: usize, n_classes: usize, seed: u64) -> Self {
        LinearHead {
            layer: Dense::kaiming_uniform(embed_dim, n_classes, &mut rng::seeded(seed)),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.layer.out_dim
    }

    pub fn logits(&self, embeddings: &Matrix) -> Matrix {
        let k = self.layer.out_dim;
        let mut out = Matrix::zeros(embeddings.rows(), k);
        for b in 0..embeddings.rows() {
            let row = out.row_mut(b);
            row.copy_from_slice(&self.layer.bias);
            for (i, &e) in embeddings.row(b).iter().enumerate() {
                for (o, w) in row.iter_mut().zip(self.layer.weight_row(i)) {
                    *o += e * w;
                }
            }
        }
        out
    }

    /// Parameter gradients and the gradient on the embeddings.
    pub fn backward(&self, embeddings: &Matrix, grad_logits: &Matrix) -> (Dense, Matrix) {
        let (d, k) = (self.layer.in_dim, self.layer.out_dim);
        let mut g = Dense::zeros(d, k);
        let mut g_emb = Matrix::zeros(embeddings.rows(), d);
        for b in 0..embeddings.rows() {
            let gl = grad_logits.row(b);
            for (bias, v) in g.bias.iter_mut().zip(gl) {
                *bias += v;
            }
            for (i, &e) in embeddings.row(b).iter().enumerate() {
                for (w, v) in g.weights[i * k..(i + 1) * k].iter_mut().zip(gl) {
                    *w += e * v;
                }
                g_emb.set(b, i, dot(self.layer.weight_row(i), gl));
            }
        }
        (g, g_emb)
    }
}

/// Encoder followed by a linear classification head, trained end to end
/// with softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedClassifier {
    pub encoder: Encoder,
    pub head: LinearHead,
    /// Class ids in logit order.
    pub classes: Vec<ClassId>,
}

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    pub model: SupervisedClassifier,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl SupervisedClassifier {
    pub fn logits(&self, inputs: &[FeatureVector]) -> Result<Matrix> {
        Ok(self.head.logits(&self.encoder.encode(inputs)?))
    }

    /// Argmax of the logits; ties go to the lowest class id.
    pub fn predict(&self, inputs: &[FeatureVector]) -> Result<Vec<ClassId>> {
        let logits = self.logits(inputs)?;
        Ok(logits
            .iter_rows()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                self.classes[best]
            })
            .collect())
    }

    fn mean_loss(&self, inputs: &[FeatureVector], targets: &[usize], batch: usize) -> Result<f64> {
        let mut total = 0.0;
        for (xs, ts) in inputs.chunks(batch).zip(targets.chunks(batch)) {
            total += softmax_cross_entropy(&self.logits(xs)?, ts)?.loss * xs.len() as f64;
        }
        Ok(total / inputs.len() as f64)
    }

    /// Trains `encoder` plus a fresh head. `classes` fixes the logit order and
    /// must cover every label.
    pub fn train(
        features: &[FeatureVector],
        labels: &[ClassId],
        classes: &[ClassId],
        encoder: Encoder,
        config: &SupervisedConfig,
    ) -> Result<SupervisedOutcome> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", features.len(), labels.len())));
        }
        if features.is_empty() {
            return Err(Error::Empty("supervised training set".into()));
        }
        if config.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        let mut classes = classes.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Validation("supervised classifier needs at least 2 classes".into()));
        }
        let targets: Vec<usize> = labels
            .iter()
            .map(|l| {
                classes
                    .binary_search(l)
                    .map_err(|_| Error::Validation(format!("label {l} is not in the class list")))
            })
            .collect::<Result<_>>()?;

        let (train_idx, val_idx) = crate::pipeline::split_indices(features.len(), config.validation_fraction, config.seed);
        let pick = |idx: &[usize]| -> (Vec<FeatureVector>, Vec<usize>) {
            (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| targets[i]).collect())
        };
        let (train_x, train_t) = pick(&train_idx);
        let (val_x, val_t) = pick(&val_idx);

        let head = LinearHead::new(encoder.embed_dim(), classes.len(), config.seed ^ 0x4845_4144);
        let mut model = SupervisedClassifier { encoder, head, classes };
        let opt_config = AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        };
        let mut enc_opt = AdamW::for_encoder(opt_config, &model.encoder);
        let mut head_opt = AdamW::new(opt_config, &[model.head.layer.weights.len(), model.head.layer.bias.len()]);
        let head_names = ["head.weight".to_string(), "head.bias".to_string()];

        let evaluate = |m: &SupervisedClassifier, train_loss: f64| -> Result<f64> {
            if val_x.is_empty() {
                Ok(train_loss)
            } else {
                m.mean_loss(&val_x, &val_t, config.batch)
            }
        };
        let train0 = model.mean_loss(&train_x, &train_t, config.batch)?;
        let val0 = evaluate(&model, train0)?;
        let mut history = vec![EpochRecord {
            epoch: 0,
            train_loss: train0,
            val_loss: val0,
        }];
        let mut best = model.clone();
        let mut best_val = val0;
        let mut best_epoch = 0;
        let mut waited = 0;

        for epoch in 1..=config.epochs {
            let mut order: Vec<usize> = (0..train_x.len()).collect();
            order.shuffle(&mut rng::derived(config.seed, epoch as u64));
            let mut total = 0.0;
            for (step, chunk) in order.chunks(config.batch).enumerate() {
                let xs: Vec<FeatureVector> = chunk.iter().map(|&i| train_x[i].clone()).collect();
                let ts: Vec<usize> = chunk.iter().map(|&i| train_t[i]).collect();
                let cache = model.encoder.forward(&xs)?;
                let ce = softmax_cross_entropy(&model.head.logits(cache.embeddings()), &ts)?;
                if !ce.loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss is {} at epoch {epoch}, step {step}",
                        ce.loss
                    )));
                }
                let (g_head, g_emb) = model.head.backward(cache.embeddings(), &ce.grad_logits);
                let g_enc = model.encoder.backward(&cache, &g_emb)?;
                enc_opt.step_encoder(&mut model.encoder, &g_enc)?;
                let layer = &mut model.head.layer;
                head_opt.step(
                    &head_names,
                    &mut [&mut layer.weights[..], &mut layer.bias[..]],
                    &[&g_head.weights[..], &g_head.bias[..]],
                )?;
                total += ce.loss * chunk.len() as f64;
            }
            let train_loss = total / train_x.len() as f64;
            let val_loss = evaluate(&model, train_loss)?;
            if !val_loss.is_finite() {
                return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
            }
            history.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
            });
            log::info!("supervised epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
            if val_loss < best_val - config.early_stop.min_delta {
                best_val = val_loss;
                best = model.clone();
                best_epoch = epoch;
                waited = 0;
            } else {
                waited += 1;
                if waited >= config.early_stop.patience {
                    break;
                }
            }
        }
        Ok(SupervisedOutcome {
            model: best,
            history,
            best_epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, EncoderConfig};
    use rand::Rng;

    fn encoder(input_dim: usize, seed: u64) -> Encoder {
        Encoder::new(EncoderConfig {
            input_dim,
            hidden_dims: vec![8],
            embed_dim: 4,
            activation: Activation::Tanh,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        for k in [2usize, 5, 15] {
            let logits = Matrix::from_vec(2, k, vec![0.7; 2 * k]).unwrap();
            let ce = softmax_cross_entropy(&logits, &[0, k - 1]).unwrap();
            assert!((ce.loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_two_class_fixture_is_learned() {
        // Class decided by the sign of a fixed direction w; a perceptron
        // on the raw inputs separates it, so the training set is separable.
        let mut r = rng::seeded(3);
        let w = [1.0, -2.0, 0.5, 1.5, -0.3, 0.8];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        while xs.len() < 80 {
            let v: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let s = dot(&v, &w);
            if s.abs() < 0.3 {
                continue;
            }
            xs.push(FeatureVector::from_dense(&v).unwrap());
            ys.push(ClassId(if s > 0.0 { 1 } else { 2 }));
        }
        let config = SupervisedConfig {
            epochs: 50,
            lr: 0.02,
            weight_decay: 0.0,
            batch: 16,
            early_stop: EarlyStop {
                patience: 50,
                min_delta: 0.0,
            },
            validation_fraction: 0.0,
            seed: 1,
        };
        let out = SupervisedClassifier::train(&xs, &ys, &[ClassId(1), ClassId(2)], encoder(6, 2), &config).unwrap();
        let pred = out.model.predict(&xs).unwrap();
        assert_eq!(pred, ys);
        assert!(out.history.last().unwrap().train_loss < out.history[0].train_loss);
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let mut r = rng::seeded(8);
        let emb = Matrix::from_rows(&(0..5).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect::<Vec<_>>()).unwrap();
        let targets = [0, 2, 1, 2, 0];
        let mut head = LinearHead::new(4, 3, 11);
        let loss = |h: &LinearHead, e: &Matrix| softmax_cross_entropy(&h.logits(e), &targets).unwrap().loss;
        let ce = softmax_cross_entropy(&head.logits(&emb), &targets).unwrap();
        let (g, g_emb) = head.backward(&emb, &ce.grad_logits);
        let eps = 1e-4;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
        for i in 0..head.layer.weights.len() {
            let orig = head.layer.weights[i];
            head.layer.weights[i] = orig + eps;
            let up = loss(&head, &emb);
            head.layer.weights[i] = orig - eps;
            let down = loss(&head, &emb);
            head.layer.weights[i] = orig;
            assert!(rel(g.weights[i], (up - down) / (2.0 * eps)) < 1e-4);
        }
        for j in 0..3 {
            let orig = head.layer.bias[j];
            head.layer.bias[j] = orig + eps;
            let up = loss(&head, &emb);
            head.layer.bias[j] = orig - eps;
            let down = loss(&head, &emb);
            head.layer.bias[j] = orig;
            assert!(rel(g.bias[j], (up - down) / (2.0 * eps)) < 1e-4);
        }
        for b in 0..5 {
            for i in 0..4 {
                let mut e = emb.clone();
                e.set(b, i, emb.get(b, i) + eps);
                let up = loss(&head, &e);
                e.set(b, i, emb.get(b, i) - eps);
                let down = loss(&head, &e);
                assert!(rel(g_emb.get(b, i), (up - down) / (2.0 * eps)) < 1e-4);
            }
        }
    }

    #[test]
    fn labels_outside_classes_are_rejected() {
        let xs = vec![FeatureVector::from_dense(&[1.0, 0.0]).unwrap(); 2];
        let err = SupervisedClassifier::train(
            &xs,
            &[ClassId(1), ClassId(3)],
            &[ClassId(1), ClassId(2)],
            encoder(2, 0),
            &SupervisedConfig::default(),
        );
        assert!(matches!(err, Err(Error::Validation(_))));
        let err = SupervisedClassifier::train(&xs, &[ClassId(1); 2], &[ClassId(1)], encoder(2, 0), &SupervisedConfig::default());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn ties_go_to_the_lowest_class() {
        let enc = encoder(2, 0);
        let mut head = LinearHead::new(4, 3, 0);
        head.layer.weights.iter_mut().for_each(|w| *w = 0.0);
        let m = SupervisedClassifier {
            encoder: enc,
            head,
            classes: vec![ClassId(2), ClassId(5), ClassId(9)],
        };
        let x = FeatureVector::from_dense(&[0.3, 0.1]).unwrap();
        assert_eq!(m.predict(&[x]).unwrap(), vec![ClassId(2)]);
    }
}
