use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-4;

/// First/second moment estimates and hyper-parameters for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_lr(len, DEFAULT_LR)
    }

    pub fn with_lr(len: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `weights` in place.
///
/// A non-finite gradient entry aborts the step before anything is modified.
pub fn adam_step(weights: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if grads.len() != weights.len() || state.m.len() != weights.len() || state.v.len() != weights.len()
    {
        return Err(Error::InvalidValue(format!(
            "length mismatch: {} weights, {} gradients, {} moments",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (((w, &g), m), v) in weights
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut w = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        adam_step(&mut w, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(w, vec![0.3, -1.2]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut w, &[1.0], &mut s).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        assert!((w[0] + 1e-4 / (1.0 + 1e-8)).abs() < 1e-18);
        let mut w = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut w, &[-250.0], &mut s).unwrap();
        assert!((w[0] - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_rejected_without_update() {
        let mut w = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        let err = adam_step(&mut w, &[0.5, f64::NAN], &mut s).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(w, vec![1.0, 2.0]);
        assert_eq!(s.step, 0);
        assert!(adam_step(&mut w, &[f64::INFINITY, 0.0], &mut s).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut w = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut w, &[0.5], &mut s).is_err());
    }
}
