use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::encoder::Encoder;
use super::matrix::Matrix;
use crate::featurize::FeatureVector;
use crate::{rng, Result};

/// A loss evaluated on a batch of embeddings.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// Gradient with respect to the embeddings, same shape.
    pub grad: Matrix,
    /// Which piecewise branch each hinge term is on. Finite differences that
    /// change this pattern straddle a kink and are not comparable.
    pub pattern: Vec<bool>,
    /// The evaluation point sits exactly on a kink.
    pub at_kink: bool,
}

impl LossEval {
    pub fn smooth(value: f64, grad: Matrix) -> Self {
        LossEval {
            value,
            grad,
            pattern: Vec::new(),
            at_kink: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Number of parameter coordinates compared.
    pub coords: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            coords: 200,
            seed: 0,
            floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic - numeric| / max(|analytic|, |numeric|, floor)
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or hinge kink.
    pub skipped: usize,
    /// The base point lies on a kink; nothing was compared.
    pub nonsmooth: bool,
}

/// Compares backpropagated parameter gradients against central differences
/// on a random subset of coordinates. First-layer weights are only sampled
/// from rows touched by a nonzero input feature (the rest have zero gradient
/// by construction).
pub fn grad_check<F>(
    encoder: &Encoder,
    inputs: &[FeatureVector],
    loss: F,
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&Matrix) -> Result<LossEval>,
{
    let cache = encoder.forward(inputs)?;
    let base = loss(cache.embeddings())?;
    if base.at_kink {
        return Ok(GradCheckReport {
            nonsmooth: true,
            ..GradCheckReport::default()
        });
    }
    let analytic = encoder.backward(&cache, &base.grad)?;
    let base_pattern = (cache.activation_pattern(), base.pattern.clone());

    let out0 = encoder.layers()[0].out_dim;
    let rows: BTreeSet<usize> = inputs.iter().flat_map(|x| x.iter().map(|(i, _)| i)).collect();
    let mut candidates: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&i| (0..out0).map(move |j| (0usize, i * out0 + j)))
        .collect();
    for (k, slice) in encoder.param_slices().iter().enumerate().skip(1) {
        candidates.extend((0..slice.len()).map(|o| (k, o)));
    }
    let mut rng = rng::seeded(config.seed);
    let chosen: Vec<(usize, usize)> = candidates
        .choose_multiple(&mut rng, config.coords.min(candidates.len()))
        .copied()
        .collect();

    let analytic_slices = analytic.slices();
    let mut probe = encoder.clone();
    let mut report = GradCheckReport::default();
    for (k, o) in chosen {
        let original = probe.param_slices()[k][o];
        let mut eval_at = |value: f64| -> Result<(f64, (Vec<bool>, Vec<bool>))> {
            probe.param_slices_mut()[k][o] = value;
            let c = probe.forward(inputs)?;
            let l = loss(c.embeddings())?;
            Ok((l.value, (c.activation_pattern(), l.pattern)))
        };
        let (plus, pattern_plus) = eval_at(original + config.epsilon)?;
        let (minus, pattern_minus) = eval_at(original - config.epsilon)?;
        probe.param_slices_mut()[k][o] = original;
        if pattern_plus != base_pattern || pattern_minus != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * config.epsilon);
        let a = analytic_slices[k][o];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, EncoderConfig};

    fn linear_encoder() -> Encoder {
        Encoder::new(EncoderConfig {
            input_dim: 5,
            hidden_dims: vec![],
            embed_dim: 3,
            activation: Activation::Relu,
            seed: 4,
        })
        .unwrap()
    }

    fn inputs() -> Vec<FeatureVector> {
        vec![
            FeatureVector::from_dense(&[0.5, -0.1, 0.0, 0.3, 1.0]).unwrap(),
            FeatureVector::from_dense(&[0.0, 0.7, -0.4, 0.2, 0.0]).unwrap(),
        ]
    }

    #[test]
    fn linear_model_with_mse_passes() {
        let enc = linear_encoder();
        let target = Matrix::from_rows(&[vec![0.6, 0.0, 0.8], vec![0.0, 1.0, 0.0]]).unwrap();
        let mse = |e: &Matrix| {
            let n = e.rows() as f64;
            let mut grad = Matrix::zeros(e.rows(), e.cols());
            let mut value = 0.0;
            for r in 0..e.rows() {
                for c in 0..e.cols() {
                    let d = e.get(r, c) - target.get(r, c);
                    value += d * d / n;
                    grad.set(r, c, 2.0 * d / n);
                }
            }
            Ok(LossEval::smooth(value, grad))
        };
        let report = grad_check(&enc, &inputs(), mse, GradCheckConfig::default()).unwrap();
        assert!(report.checked > 0);
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_gradients_both_ways() {
        let enc = linear_encoder();
        let constant = |e: &Matrix| Ok(LossEval::smooth(3.5, Matrix::zeros(e.rows(), e.cols())));
        let report = grad_check(&enc, &inputs(), constant, GradCheckConfig::default()).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.checked > 0);
    }

    #[test]
    fn kink_at_base_point_is_flagged() {
        let enc = linear_encoder();
        let on_kink = |e: &Matrix| {
            Ok(LossEval {
                value: 0.0,
                grad: Matrix::zeros(e.rows(), e.cols()),
                pattern: vec![false],
                at_kink: true,
            })
        };
        let report = grad_check(&enc, &inputs(), on_kink, GradCheckConfig::default()).unwrap();
        assert!(report.nonsmooth);
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn unused_first_layer_rows_are_not_sampled() {
        let mut layer = Dense::zeros(5, 3);
        layer.bias = vec![1.0, 0.0, 0.0];
        let enc = Encoder::from_layers(linear_encoder().config().clone(), vec![layer]).unwrap();
        let x = vec![FeatureVector::from_dense(&[0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()];
        let report = grad_check(
            &enc,
            &x,
            |e: &Matrix| Ok(LossEval::smooth(e.get(0, 1), {
                let mut g = Matrix::zeros(1, 3);
                g.set(0, 1, 1.0);
                g
            })),
            GradCheckConfig { coords: 1000, ..GradCheckConfig::default() },
        )
        .unwrap();
        // row 2 of layer0 (3 weights) + 3 biases
        assert_eq!(report.checked + report.skipped, 6);
    }
}
