//! Learning-rate schedule meta-optimization on a 2-D regression surface.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unroll::{StepJacobians, SystemState, UnrolledSystem};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toy2dConfig {
    pub horizon: usize,
    pub x_init: [f64; 2],
}

impl Default for Toy2dConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            x_init: [1.0, 1.0],
        }
    }
}

/// Inner loss `f(x0, x1) = √(x0²+5) − √5 + sin²(x1)·e^(−5x0²) + 0.25|x1 − 100|`.
pub fn inner_loss(x: [f64; 2]) -> f64 {
    let [x0, x1] = x;
    (x0 * x0 + 5.0).sqrt() - SQRT5
        + x1.sin().powi(2) * (-5.0 * x0 * x0).exp()
        + 0.25 * (x1 - 100.0).abs()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn inner_grad(x: [f64; 2]) -> [f64; 2] {
    let [x0, x1] = x;
    let e = (-5.0 * x0 * x0).exp();
    let s2 = x1.sin().powi(2);
    [
        x0 / (x0 * x0 + 5.0).sqrt() - 10.0 * x0 * s2 * e,
        (2.0 * x1).sin() * e + 0.25 * sign(x1 - 100.0),
    ]
}

pub fn inner_hessian(x: [f64; 2]) -> [[f64; 2]; 2] {
    let [x0, x1] = x;
    let e = (-5.0 * x0 * x0).exp();
    let s2 = x1.sin().powi(2);
    let fxx = 5.0 / (x0 * x0 + 5.0).powf(1.5) + s2 * e * (100.0 * x0 * x0 - 10.0);
    let fxy = (2.0 * x1).sin() * (-10.0 * x0) * e;
    let fyy = 2.0 * (2.0 * x1).cos() * e;
    [[fxx, fxy], [fxy, fyy]]
}

/// Gradient descent on [`inner_loss`] with `α_t = (1−t/T)e^{θ0} + (t/T)e^{θ1}`.
///
/// State is `x`; step `t` applies `x ← x − α_t ∇f(x)` and reports `f(x_new)`.
#[derive(Debug, Clone)]
pub struct Toy2d {
    config: Toy2dConfig,
}

impl Toy2d {
    pub fn new(config: &Toy2dConfig) -> Result<Self> {
        if config.horizon == 0 || !config.x_init.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "toy2d needs horizon ≥ 1 and a finite x_init".into(),
            ));
        }
        Ok(Self { config: *config })
    }

    fn schedule(&self, t: usize, theta: &[f64]) -> (f64, [f64; 2]) {
        let frac = t as f64 / self.config.horizon as f64;
        let w = [(1.0 - frac) * theta[0].exp(), frac * theta[1].exp()];
        (w[0] + w[1], w)
    }

    fn advance(&self, state: &SystemState, theta: &[f64]) -> ([f64; 2], [f64; 2], f64, [f64; 2]) {
        let x = [state.values[0], state.values[1]];
        let g = inner_grad(x);
        let (lr, w) = self.schedule(state.step_index, theta);
        ([x[0] - lr * g[0], x[1] - lr * g[1]], g, lr, w)
    }

    /// Whether any iterate of the full unroll at `theta` sits within `tol` of
    /// the `|x1 − 100|` kink.
    pub fn visits_kink(&self, theta: &[f64], tol: f64) -> bool {
        let mut state = self.init_state();
        for _ in 0..self.config.horizon {
            if (state.values[1] - 100.0).abs() < tol {
                return true;
            }
            state = self.step(&state, theta).0;
        }
        (state.values[1] - 100.0).abs() < tol
    }
}

impl UnrolledSystem for Toy2d {
    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn init_state(&self) -> SystemState {
        SystemState::initial(self.config.x_init.to_vec())
    }

    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        let (next, ..) = self.advance(state, theta);
        let loss = if state.step_index < self.config.horizon {
            inner_loss(next)
        } else {
            0.0
        };
        (SystemState::new(next.to_vec(), state.step_index + 1), loss)
    }

    fn has_jacobians(&self) -> bool {
        true
    }

    fn step_jacobians(&self, state: &SystemState, theta: &[f64]) -> Option<StepJacobians> {
        let x = [state.values[0], state.values[1]];
        let (next, g, lr, w) = self.advance(state, theta);
        let hess = inner_hessian(x);
        let h = DMatrix::from_fn(2, 2, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - lr * hess[i][j]
        });
        let f = DMatrix::from_fn(2, 2, |i, j| -g[i] * w[j]);
        Some(StepJacobians {
            state: h,
            param: f,
            loss_state: DVector::from_column_slice(&inner_grad(next)),
            loss_param: DVector::zeros(2),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unroll::unroll;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn inner_loss_at_one_one() {
        let oracle = 6f64.sqrt() - 5f64.sqrt()
            + 1f64.sin() * 1f64.sin() * (-5f64).exp()
            + 0.25 * 99.0;
        assert!((inner_loss([1.0, 1.0]) - oracle).abs() < 1e-14);
        assert!((inner_loss([1.0, 1.0]) - 24.968_192_726_447).abs() < 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for x in [[1.0, 1.0], [0.3, -2.0], [-0.7, 4.5], [0.05, 99.0]] {
            let g = inner_grad(x);
            assert!((g[0] - central(|a| inner_loss([a, x[1]]), x[0])).abs() < 1e-6);
            assert!((g[1] - central(|b| inner_loss([x[0], b]), x[1])).abs() < 1e-6);
            let hess = inner_hessian(x);
            for j in 0..2 {
                let d0 = central(
                    |a| {
                        let mut y = x;
                        y[j] = a;
                        inner_grad(y)[0]
                    },
                    x[j],
                );
                let d1 = central(
                    |a| {
                        let mut y = x;
                        y[j] = a;
                        inner_grad(y)[1]
                    },
                    x[j],
                );
                assert!((hess[0][j] - d0).abs() < 1e-5, "x={x:?}");
                assert!((hess[1][j] - d1).abs() < 1e-5, "x={x:?}");
            }
        }
    }

    #[test]
    fn kink_subgradient_is_zero() {
        assert_eq!(inner_grad([0.0, 100.0])[1], (200f64).sin() * 1.0);
    }

    #[test]
    fn schedule_interpolates() {
        let sys = Toy2d::new(&Toy2dConfig::default()).unwrap();
        let theta = [0.01f64.ln(), 0.1f64.ln()];
        assert!((sys.schedule(0, &theta).0 - 0.01).abs() < 1e-15);
        assert!((sys.schedule(50, &theta).0 - 0.055).abs() < 1e-15);
    }

    #[test]
    fn full_unroll_is_reproducible() {
        let sys = Toy2d::new(&Toy2dConfig::default()).unwrap();
        let theta = [0.01f64.ln(); 2];
        let a = unroll(&sys, &sys.init_state(), &theta, 100).unwrap();
        let b = unroll(&sys, &sys.init_state(), &theta, 100).unwrap();
        assert_eq!(a.loss_sum.to_bits(), b.loss_sum.to_bits());
        assert_eq!(a.final_state, b.final_state);
        assert!(!sys.visits_kink(&theta, 1e-6));
    }
}
