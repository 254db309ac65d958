//! Outer-loop optimizers for θ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_grad(theta: &[f64], grad: &[f64]) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            actual: grad.len(),
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(())
}

/// `θ' = θ - α·grad`.
pub fn sgd_update(theta: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
    check_grad(theta, grad)?;
    Ok(theta.iter().zip(grad).map(|(t, g)| t - lr * g).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-2;
    pub const DEFAULT_BETA1: f64 = 0.99;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn with_defaults(dim: usize) -> Self {
        Self::new(
            dim,
            Self::DEFAULT_LR,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
            Self::DEFAULT_EPS,
        )
    }
}

/// Adam with bias correction at `t + 1` and `ε` added outside the square root.
pub fn adam_update(state: &mut AdamState, theta: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    check_grad(theta, grad)?;
    if state.m.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            actual: theta.len(),
        });
    }
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t + 1);
    let c2 = 1.0 - state.beta2.powi(t + 1);
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        state.m[i] = (1.0 - state.beta1) * grad[i] + state.beta1 * state.m[i];
        state.v[i] = (1.0 - state.beta2) * (grad[i] * grad[i]) + state.beta2 * state.v[i];
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        out.push(theta[i] - state.lr * mhat / (vhat.sqrt() + state.eps));
    }
    state.step += 1;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam(AdamState),
}

/// An outer optimizer with optional per-coordinate gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterOptimizer {
    pub kind: OptimizerKind,
    pub clip: Option<f64>,
}

impl OuterOptimizer {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd { lr },
            clip: None,
        }
    }

    pub fn adam(state: AdamState) -> Self {
        Self {
            kind: OptimizerKind::Adam(state),
            clip: None,
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip = clip;
        self
    }

    pub fn update(&mut self, theta: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        let clipped: Vec<f64>;
        let grad = match self.clip {
            Some(c) => {
                check_grad(theta, grad)?;
                clipped = grad.iter().map(|g| g.clamp(-c, c)).collect();
                &clipped
            }
            None => grad,
        };
        match &mut self.kind {
            OptimizerKind::Sgd { lr } => sgd_update(theta, grad, *lr),
            OptimizerKind::Adam(state) => adam_update(state, theta, grad),
        }
    }
}
