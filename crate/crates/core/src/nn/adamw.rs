use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, Gradients};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments:
///
/// ```text
/// p <- p - lr * wd * p
/// m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    /// Moment buffers shaped like `shapes` (one length per parameter slice).
    pub fn new(config: AdamWConfig, shapes: &[usize]) -> Self {
        AdamW {
            config,
            step_count: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_encoder(config: AdamWConfig, encoder: &Encoder) -> Self {
        let shapes: Vec<usize> = encoder.param_slices().iter().map(|s| s.len()).collect();
        AdamW::new(config, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over named parameter slices. Nothing is modified if any
    /// gradient is non-finite or a shape disagrees.
    pub fn step(&mut self, names: &[String], params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} buffers, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[k].len() {
                return Err(Error::Shape(format!("parameter {} has mismatched length", name(names, k))));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", name(names, k))));
            }
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for i in 0..p.len() {
                let gi = g[i];
                p[i] -= c.lr * c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }

    pub fn step_encoder(&mut self, encoder: &mut Encoder, grads: &Gradients) -> Result<()> {
        let names = encoder.param_names();
        let grad_slices = grads.slices();
        let mut params = encoder.param_slices_mut();
        self.step(&names, &mut params, &grad_slices)
    }
}

fn name(names: &[String], k: usize) -> String {
    names.get(k).cloned().unwrap_or_else(|| format!("param{k}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("p{k}")).collect()
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let config = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        for g in [0.37, -2.5, 1e-3] {
            let mut opt = AdamW::new(config, &[1]);
            let mut p = [1.0];
            opt.step(&names(1), &mut [&mut p[..]], &[&[g][..]]).unwrap();
            let expected = 1.0 - config.lr * g / (g.abs() + config.eps);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!((p[0] - (1.0 - config.lr * g.signum())).abs() < 1e-8);
            assert_eq!(opt.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let config = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(config, &[3]);
        let mut p = [0.5, -1.0, 2.0];
        for _ in 0..4 {
            opt.step(&names(1), &mut [&mut p[..]], &[&[0.0; 3][..]]).unwrap();
        }
        assert_eq!(p, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn quadratic_bowl_trajectory_matches_reference() {
        // f(x, y) = x^2 + 3 y^2, gradient (2x, 6y). Reference values are the
        // step-by-step AdamW recurrence written out longhand.
        let config = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        };
        let mut opt = AdamW::new(config, &[2]);
        let mut p = [1.0, -2.0];

        let (mut rx, mut ry) = (1.0f64, -2.0f64);
        let (mut mx, mut my, mut vx, mut vy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = [2.0 * p[0], 6.0 * p[1]];
            opt.step(&names(1), &mut [&mut p[..]], &[&g[..]]).unwrap();

            let (gx, gy) = (2.0 * rx, 6.0 * ry);
            rx *= 1.0 - 0.1 * 0.05;
            ry *= 1.0 - 0.1 * 0.05;
            mx = 0.9 * mx + 0.1 * gx;
            my = 0.9 * my + 0.1 * gy;
            vx = 0.999 * vx + 0.001 * gx * gx;
            vy = 0.999 * vy + 0.001 * gy * gy;
            let b1 = 1.0 - 0.9f64.powi(t);
            let b2 = 1.0 - 0.999f64.powi(t);
            rx -= 0.1 * (mx / b1) / ((vx / b2).sqrt() + 1e-8);
            ry -= 0.1 * (my / b1) / ((vy / b2).sqrt() + 1e-8);
            assert!((p[0] - rx).abs() < 1e-12 && (p[1] - ry).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_leaves_state() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[2, 1]);
        let mut a = [1.0, 2.0];
        let mut b = [3.0];
        let names = vec!["layer0.weight".to_string(), "layer0.bias".to_string()];
        let err = opt
            .step(&names, &mut [&mut a[..], &mut b[..]], &[&[0.1, 0.2][..], &[f64::NAN][..]])
            .unwrap_err();
        assert!(err.to_string().contains("layer0.bias"));
        assert_eq!(a, [1.0, 2.0]);
        assert_eq!(opt.step_count(), 0);
    }
}
