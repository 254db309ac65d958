//! Influence balancing: a linear system whose short-horizon gradient points
//! the wrong way.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unroll::{StepJacobians, SystemState, UnrolledSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceConfig {
    pub n: usize,
    /// Number of coordinates driven by `+θ`; the rest get `-θ`.
    pub p: usize,
    pub horizon: usize,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            n: 23,
            p: 10,
            horizon: 100,
        }
    }
}

/// `s_{t+1} = A s_t + (θ,…,θ,-θ,…,-θ)`, `L_t = ½(s_t⁰ - 1)²`, `s_0 = 1`.
#[derive(Debug, Clone)]
pub struct InfluenceBalancing {
    a: DMatrix<f64>,
    signs: DVector<f64>,
    horizon: usize,
}

impl InfluenceBalancing {
    pub fn new(config: &InfluenceConfig) -> Result<Self> {
        let InfluenceConfig { n, p, horizon } = *config;
        if n == 0 || p > n || horizon == 0 {
            return Err(Error::InvalidArgument(format!(
                "influence balancing needs n ≥ 1, p ≤ n, horizon ≥ 1 (got n={n}, p={p}, horizon={horizon})"
            )));
        }
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 0.5;
            if i + 1 < n {
                a[(i, i + 1)] = 0.5;
            }
        }
        let signs = DVector::from_fn(n, |i, _| if i < p { 1.0 } else { -1.0 });
        Ok(Self { a, signs, horizon })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn next(&self, state: &SystemState, theta: &[f64]) -> DVector<f64> {
        let s = DVector::from_column_slice(&state.values);
        &self.a * s + &self.signs * theta[0]
    }
}

impl UnrolledSystem for InfluenceBalancing {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn state_dim(&self) -> usize {
        self.signs.len()
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn init_state(&self) -> SystemState {
        SystemState::initial(vec![1.0; self.signs.len()])
    }

    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        let next = self.next(state, theta);
        let loss = 0.5 * (next[0] - 1.0).powi(2);
        (
            SystemState::new(next.as_slice().to_vec(), state.step_index + 1),
            loss,
        )
    }

    fn has_jacobians(&self) -> bool {
        true
    }

    fn step_jacobians(&self, state: &SystemState, theta: &[f64]) -> Option<StepJacobians> {
        let next = self.next(state, theta);
        let mut loss_state = DVector::zeros(self.signs.len());
        loss_state[0] = next[0] - 1.0;
        Some(StepJacobians {
            state: self.a.clone(),
            param: DMatrix::from_column_slice(self.signs.len(), 1, self.signs.as_slice()),
            loss_state,
            loss_param: DVector::zeros(1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::tbptt_step;
    use crate::unroll::{full_gradient, telescope, unroll, unroll_retaining};

    fn dense_oracle_step(s: &[f64], theta: f64) -> Vec<f64> {
        let n = s.len();
        (0..n)
            .map(|i| {
                let right = if i + 1 < n { s[i + 1] } else { 0.0 };
                let sign = if i < 10 { 1.0 } else { -1.0 };
                0.5 * s[i] + 0.5 * right + sign * theta
            })
            .collect()
    }

    #[test]
    fn defaults() {
        let sys = InfluenceBalancing::new(&InfluenceConfig::default()).unwrap();
        assert_eq!((sys.state_dim(), sys.param_dim(), sys.horizon()), (23, 1, 100));
        assert!(sys.has_jacobians());
        assert_eq!(sys.signs.iter().filter(|s| **s > 0.0).count(), 10);
    }

    #[test]
    fn one_step_loss() {
        let sys = InfluenceBalancing::new(&InfluenceConfig::default()).unwrap();
        let r = unroll(&sys, &sys.init_state(), &[0.5], 1).unwrap();
        assert_eq!(r.final_state.values[0], 1.5);
        assert_eq!(r.loss_sum, 0.125);
    }

    #[test]
    fn matches_dense_oracle_over_many_steps() {
        let sys = InfluenceBalancing::new(&InfluenceConfig::default()).unwrap();
        let r = unroll_retaining(&sys, &sys.init_state(), &[0.3], 20).unwrap();
        let mut s = vec![1.0; 23];
        let mut losses = Vec::new();
        for _ in 0..20 {
            s = dense_oracle_step(&s, 0.3);
            losses.push(0.5 * (s[0] - 1.0) * (s[0] - 1.0));
        }
        for (a, b) in r.final_state.values.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in r.per_step_losses.unwrap().iter().zip(&losses) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn telescoped_sum_is_final_loss() {
        let cfg = InfluenceConfig {
            horizon: 5,
            ..Default::default()
        };
        let sys = InfluenceBalancing::new(&cfg).unwrap();
        let direct = unroll_retaining(&sys, &sys.init_state(), &[0.5], 5).unwrap();
        let last = *direct.per_step_losses.unwrap().last().unwrap();
        let tele = telescope(sys);
        let r = unroll(&tele, &tele.init_state(), &[0.5], 5).unwrap();
        assert!((r.loss_sum - last).abs() <= 1e-12 * last.abs());
    }

    #[test]
    fn truncated_and_full_gradients_disagree_in_sign() {
        let sys = InfluenceBalancing::new(&InfluenceConfig::default()).unwrap();
        let full = full_gradient(&sys, &[0.5]).unwrap()[0];
        let mut state = sys.init_state();
        let mut truncated = 0.0;
        for _ in 0..sys.horizon() {
            truncated += tbptt_step(&sys, &mut state, &[0.5], 1).unwrap().grad[0];
        }
        assert!(full > 0.0, "full gradient {full}");
        assert!(truncated < 0.0, "truncated gradient {truncated}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = InfluenceConfig {
            p: 30,
            ..Default::default()
        };
        assert!(InfluenceBalancing::new(&cfg).is_err());
    }
}
