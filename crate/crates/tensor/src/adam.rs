use crate::{ParamSet, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step and indexed like the parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable parameter, then clear all grads.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (_, p) in params.iter() {
            if p.requires_grad && p.grad().is_none() {
                return Err(TensorError::MissingGrad(p.name.clone()));
            }
        }
        if self.first.is_empty() {
            for (_, p) in params.iter() {
                let n = if p.requires_grad { p.value().numel() } else { 0 };
                self.first.push(vec![0.0; n]);
                self.second.push(vec![0.0; n]);
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let g = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let w = p.value_mut().data_mut();
            for j in 0..w.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(value: Vec<f64>, grad: Vec<f64>) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::row(value));
        ps.get_mut(id).accumulate_grad(&grad);
        ps
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = single(vec![1.0, -2.0], vec![0.0, 0.0]);
        Adam::new(AdamConfig::default()).step(&mut ps).unwrap();
        assert_eq!(ps.value(crate::ParamId(0)).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 0.01;
        let mut ps = single(vec![0.5, 0.5, 0.5], vec![3.0, -0.2, 1e-3]);
        Adam::new(AdamConfig::with_lr(lr)).step(&mut ps).unwrap();
        let w = ps.value(crate::ParamId(0)).data();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        for (wi, g) in w.iter().zip([3.0f64, -0.2, 1e-3]) {
            let expected = 0.5 - lr * g / (g.abs() + 1e-8);
            assert!((wi - expected).abs() < 1e-15);
            assert!((wi - (0.5 - lr * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::row(vec![1.0]));
        let err = Adam::new(AdamConfig::default()).step(&mut ps).unwrap_err();
        assert_eq!(err, TensorError::MissingGrad("w".into()));
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut ps = ParamSet::new();
        let id = ps.add_frozen("w", Tensor::row(vec![1.0]));
        Adam::new(AdamConfig::default()).step(&mut ps).unwrap();
        assert_eq!(ps.value(id).data(), &[1.0]);
    }

    #[test]
    fn grads_cleared_after_step() {
        let mut ps = single(vec![1.0], vec![0.5]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut ps).unwrap();
        assert!(ps.get(crate::ParamId(0)).grad().is_none());
        assert_eq!(opt.steps(), 1);
    }
}
