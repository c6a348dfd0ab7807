use super::Tensor;
use crate::error::{Error, Result};

/// Anything holding trainable tensors. Visit order must be stable, since
/// optimizer state is matched to tensors by position.
pub trait Parameters {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments, one buffer per visited tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            state: AdamWState::default(),
        }
    }

    /// One update over every parameter with a populated gradient. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut dyn Parameters) -> Result<()> {
        let mut problem = None;
        let mut index = 0usize;
        params.visit_mut(&mut |t| {
            if problem.is_none() {
                if let Some(g) = &t.grad {
                    if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                        problem = Some(format!(
                            "gradient of parameter #{index} (shape {:?}) has {} at element {pos}",
                            t.shape(),
                            g[pos]
                        ));
                    }
                }
            }
            index += 1;
        });
        if let Some(msg) = problem {
            return Err(Error::Rejected(msg));
        }

        let c = self.config;
        let state = &mut self.state;
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let mut index = 0usize;
        params.visit_mut(&mut |p| {
            if state.m.len() <= index {
                state.m.resize(index + 1, Vec::new());
                state.v.resize(index + 1, Vec::new());
            }
            let n = p.numel();
            if state.m[index].len() != n {
                state.m[index] = vec![0.0; n];
                state.v[index] = vec![0.0; n];
            }
            if let Some(g) = p.grad.take() {
                let m = &mut state.m[index];
                let v = &mut state.v[index];
                for (((theta, g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m).zip(v) {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *theta -= c.lr * c.weight_decay * *theta;
                    *theta -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                }
                p.grad = Some(g);
            }
            index += 1;
        });
        Ok(())
    }
}

/// Clears every gradient buffer.
pub fn zero_grads(params: &mut dyn Parameters) {
    params.visit_mut(&mut |t| t.grad = None);
}

#[cfg(test)]
mod tests {
    use super::*;

    struct One(Tensor);

    impl Parameters for One {
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
            f(&mut self.0);
        }
    }

    fn scalar_with_grad(value: f64, grad: f64) -> One {
        let mut t = Tensor::new(vec![1], vec![value]).unwrap().with_grad();
        t.grad = Some(vec![grad]);
        One(t)
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = scalar_with_grad(0.7, 0.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..5 {
            opt.step(&mut p).unwrap();
        }
        assert_eq!(p.0.data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_with_grad(1.0, 1.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut p).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.0.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_multiplicatively() {
        let mut p = scalar_with_grad(2.0, 0.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        });
        opt.step(&mut p).unwrap();
        assert!((p.0.item() - 2.0 * (1.0 - 1e-3 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let mut p = scalar_with_grad(1.0, f64::NAN);
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt.step(&mut p).unwrap_err();
        assert!(matches!(err, Error::Rejected(_)));
        assert_eq!(p.0.item(), 1.0);
        assert_eq!(opt.state.step, 0);
    }

    #[test]
    fn parameters_without_gradient_are_skipped() {
        let mut p = One(Tensor::new(vec![1], vec![3.0]).unwrap());
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut p).unwrap();
        assert_eq!(p.0.item(), 3.0);
    }
}
