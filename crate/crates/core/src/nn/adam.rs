use serde::{Deserialize, Serialize};

use super::ParamGrad;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim(format!(
            "adam: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient passed to adam".into()));
    }
    apply(params, grads, state, cfg);
    Ok(())
}

fn apply<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) {
    state.step += 1;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let c1 = one - T::of(cfg.beta1.powi(state.step as i32));
    let c2 = one - T::of(cfg.beta2.powi(state.step as i32));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over every parameter tensor of a model, in visitation order.
pub struct Adam<T> {
    pub config: AdamConfig,
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: Vec::new(),
        }
    }

    /// Updates all parameters from their accumulated gradients. Every
    /// gradient is checked before any parameter changes.
    pub fn step(&mut self, params: Vec<ParamGrad<'_, T>>) -> Result<()> {
        if self.states.is_empty() {
            self.states = params.iter().map(|p| AdamState::zeros(p.value.len())).collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::dim(format!(
                "adam was initialized for {} tensors, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&self.states) {
            if p.grad.len() != s.m.len() || p.value.len() != s.m.len() {
                return Err(Error::dim(format!("adam state mismatch for {}", p.name)));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        for (p, s) in params.into_iter().zip(&mut self.states) {
            apply(p.value, p.grad, s, &self.config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0];
        let mut s = AdamState::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.m, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g and v̂ = g², so Δ = −lr·g/(|g|+ε).
        let cfg = AdamConfig::default();
        let g = [0.5f64, -3.0, 1e-3];
        let mut p = vec![0.0f64; 3];
        let mut s = AdamState::zeros(3);
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = vec![0.0f64, 0.0];
        let mut s = AdamState::zeros(2);
        for _ in 0..200 {
            adam_step(&mut p, &[2.0, -0.1], &mut s, &AdamConfig::default()).unwrap();
        }
        assert!(p[0] < -0.1 && p[1] > 0.1);
    }

    #[test]
    fn nan_gradient_fails_fast() {
        let mut p = vec![1.0f64];
        let mut s = AdamState::zeros(1);
        assert!(adam_step(&mut p, &[f64::NAN], &mut s, &AdamConfig::default()).is_err());
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.step, 0);
    }
}
