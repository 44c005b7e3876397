//! Adam with bias correction, and reduce-on-plateau learning-rate control.

use alloc::vec::Vec;

use crate::error::{numerics_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// Number of completed steps.
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `params`, default betas and epsilon.
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { t: 0, lr, beta1: DEFAULT_BETA1, beta2: DEFAULT_BETA2, eps: DEFAULT_EPS, m: zeros(), v: zeros() }
    }

    /// One in-place update. On error nothing is modified.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(shape_err!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(shape_err!("adam: parameter {} shape {:?} vs grad {:?}", i, p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(numerics_err!("adam: non-finite gradient for parameter {}", i));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - num_traits::Float::powi(self.beta1, t);
        let bc2 = 1.0 - num_traits::Float::powi(self.beta2, t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let (inv_bc1, inv_bc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
        let (lr, eps) = (T::from_f64(self.lr), T::from_f64(self.eps));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let lanes = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in lanes {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m * inv_bc1;
                let v_hat = *v * inv_bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<T: Real>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    state.step(params, grads)
}

pub const PLATEAU_PATIENCE: usize = 6;
pub const PLATEAU_FACTOR: f64 = 0.1;
pub const PLATEAU_MIN_LR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauState {
    pub best_val_loss: f64,
    pub epochs_since_improve: usize,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauState {
    fn default() -> Self {
        PlateauState {
            best_val_loss: f64::INFINITY,
            epochs_since_improve: 0,
            patience: PLATEAU_PATIENCE,
            factor: PLATEAU_FACTOR,
            min_lr: PLATEAU_MIN_LR,
        }
    }
}

impl PlateauState {
    /// Feeds one epoch's validation loss; returns the learning rate to use next.
    pub fn update(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.epochs_since_improve = 0;
            return lr;
        }
        self.epochs_since_improve += 1;
        if self.epochs_since_improve >= self.patience {
            self.epochs_since_improve = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Functional form of [`PlateauState::update`].
pub fn plateau_update(state: &PlateauState, val_loss: f64, lr: f64) -> (f64, PlateauState) {
    let mut next = *state;
    let lr = next.update(val_loss, lr);
    (lr, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f64>::from_f64(&[2], &[1.0, -2.0]).unwrap()];
        let mut s = AdamState::new(&p, 0.1);
        s.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut s = AdamState::new(&p, 0.1);
        s.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((p[0].data()[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let init = Tensor::<f32>::from_f64(&[3], &[0.5, 0.1, -0.3]).unwrap();
        let g = Tensor::<f32>::from_f64(&[3], &[0.2, -0.4, 0.9]).unwrap();
        let mut p = vec![init.clone(), init];
        let mut s = AdamState::new(&p, 1e-3);
        for _ in 0..5 {
            s.step(&mut p, &[g.clone(), g.clone()]).unwrap();
        }
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_side_effects() {
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut s = AdamState::new(&p, 0.1);
        let before = (p.clone(), s.clone());
        let err = s.step(&mut p, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, crate::Error::Numerics(_)));
        assert_eq!((p, s), before);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut s = AdamState::new(&p, 0.1);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * p[0].data()[0]);
            s.step(&mut p, &[g]).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-2, "{}", p[0].data()[0]);
    }

    #[test]
    fn plateau_examples() {
        let mut s = PlateauState::default();
        assert_eq!(s.update(1.0, 1e-4), 1e-4);
        assert_eq!(s.update(0.9, 1e-4), 1e-4);

        let mut s = PlateauState::default();
        let mut lr = 1e-4;
        lr = s.update(1.0, lr);
        for epoch in 2..=7 {
            lr = s.update(1.0, lr);
            if epoch < 7 {
                assert_eq!(lr, 1e-4);
            }
        }
        assert_eq!(lr, 1e-5);
        assert_eq!(s.epochs_since_improve, 0);

        let mut s = PlateauState::default();
        let mut lr = PLATEAU_MIN_LR;
        for _ in 0..20 {
            lr = s.update(5.0, lr);
        }
        assert_eq!(lr, PLATEAU_MIN_LR);
    }

    #[test]
    fn functional_plateau_matches_method() {
        let s = PlateauState::default();
        let (lr, next) = plateau_update(&s, 0.5, 1e-3);
        assert_eq!(lr, 1e-3);
        assert_eq!(next.best_val_loss, 0.5);
        assert_eq!(s.best_val_loss, f64::INFINITY);
    }
}
