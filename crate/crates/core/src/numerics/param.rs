use rand::Rng;

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Adam hyper-parameters. Only the learning rate is pinned by the model
/// description; the moment decays and epsilon use the usual defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Detached Adam moment state, used when one parameter is optimized by
/// two objectives that keep separate moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: DenseMatrix,
    pub v: DenseMatrix,
    pub step_count: u64,
}

impl AdamMoments {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
            step_count: 0,
        }
    }
}

/// A named trainable tensor with its gradient buffer and Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub adam_m: DenseMatrix,
    pub adam_v: DenseMatrix,
    pub step_count: u64,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(r, c),
            adam_m: DenseMatrix::zeros(r, c),
            adam_v: DenseMatrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, DenseMatrix::zeros(rows, cols))
    }

    pub fn gaussian<R: Rng + ?Sized>(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self::new(name, DenseMatrix::random_normal(rows, cols, std, rng))
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `λ·Σθ²` to the objective: returns the term and accumulates `2λθ`.
    pub fn add_l2(&mut self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        for (g, &v) in self.grad.data_mut().iter_mut().zip(self.value.data()) {
            *g += 2.0 * lambda * v;
        }
        lambda * self.value.sum_squares()
    }

    /// Exchanges this tensor's moment state with `other`.
    pub fn swap_moments(&mut self, other: &mut AdamMoments) {
        std::mem::swap(&mut self.adam_m, &mut other.m);
        std::mem::swap(&mut self.adam_v, &mut other.v);
        std::mem::swap(&mut self.step_count, &mut other.step_count);
    }

    /// Bias-corrected Adam update in place; the gradient is zeroed afterward.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if !self.grad.is_finite() {
            return Err(Error::Optimizer(self.name.clone()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let value = self.value.data_mut();
        let grad = self.grad.data_mut();
        let m = self.adam_m.data_mut();
        let v = self.adam_v.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            grad[i] = 0.0;
        }
        Ok(())
    }
}

/// Free-function form of [`ParamTensor::adam_step`].
pub fn adam_step(p: &mut ParamTensor, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    p.adam_step(&AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    })
}
