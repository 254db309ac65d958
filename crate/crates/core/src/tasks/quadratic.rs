//! Synthetic losses with a prescribed gradient matrix.
//!
//! Step `t` records the parameters it was applied with. The loss at step `t`
//! is linear in every earlier application plus an optional curvature term,
//!
//! `L_t = Σ_{τ≤t} h_{τ,t}ᵀ θ_τ + ½c‖θ_t‖²`,
//!
//! so `∇_{θ_τ} L_t = h_{τ,t}` (at `c = 0`) and the total gradient is known in
//! closed form. Diagonal structures keep only `h_{t,t}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::unroll::{StepJacobians, SystemState, UnrolledSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Diagonal,
    UpperTriangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    /// Every nonzero block equals the same vector along `1/√P`.
    Identical,
    /// Blocks drawn i.i.d. Gaussian with the scenario's per-block variance.
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticConfig {
    pub param_dim: usize,
    pub horizon: usize,
    pub structure: Structure,
    pub correlation: Correlation,
    /// `‖g‖` of the total gradient for identical blocks; the expected norm
    /// scale for i.i.d. blocks.
    pub g_norm: f64,
    pub curvature: f64,
    pub seed: u64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            param_dim: 3,
            horizon: 4,
            structure: Structure::Diagonal,
            correlation: Correlation::Identical,
            g_norm: 1.0,
            curvature: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticScenario {
    config: QuadraticConfig,
    /// `blocks[t][τ]` is `h_{τ,t}`; zero where the structure has no block.
    blocks: Vec<Vec<Vec<f64>>>,
}

impl QuadraticScenario {
    pub fn new(config: &QuadraticConfig) -> Result<Self> {
        let c = *config;
        if c.param_dim == 0 || c.horizon == 0 {
            return Err(Error::InvalidArgument(
                "quadratic scenario needs param_dim ≥ 1 and horizon ≥ 1".into(),
            ));
        }
        if !(c.g_norm.is_finite() && c.curvature.is_finite()) {
            return Err(Error::InvalidArgument(
                "quadratic scenario needs finite g_norm and curvature".into(),
            ));
        }
        let (p, t_max) = (c.param_dim, c.horizon);
        let tf = t_max as f64;
        let pf = p as f64;
        let n_blocks = match c.structure {
            Structure::Diagonal => tf,
            Structure::UpperTriangular => tf * (tf + 1.0) / 2.0,
        };
        let mut blocks = vec![vec![vec![0.0; p]; t_max]; t_max];
        for t in 0..t_max {
            for tau in 0..=t {
                if c.structure == Structure::Diagonal && tau != t {
                    continue;
                }
                blocks[t][tau] = match c.correlation {
                    Correlation::Identical => vec![c.g_norm / (n_blocks * pf.sqrt()); p],
                    Correlation::Iid => {
                        let sd = c.g_norm / (n_blocks * pf).sqrt();
                        let mut s = rng::stream(c.seed, t as u64, tau as u64);
                        rng::gaussian_vector(&mut s, p, sd)
                    }
                };
            }
        }
        Ok(Self { config: c, blocks })
    }

    pub fn config(&self) -> &QuadraticConfig {
        &self.config
    }

    /// `h_{τ,t}`.
    pub fn block(&self, tau: usize, t: usize) -> &[f64] {
        &self.blocks[t][tau]
    }

    /// `Σ_{t,τ} h_{τ,t} + c·T·θ`.
    pub fn analytic_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.config.param_dim;
        let mut g = vec![0.0; p];
        for row in &self.blocks {
            for h in row {
                for j in 0..p {
                    g[j] += h[j];
                }
            }
        }
        let scale = self.config.curvature * self.config.horizon as f64;
        for j in 0..p {
            g[j] += scale * theta[j];
        }
        g
    }

    fn slot(&self, t: usize) -> std::ops::Range<usize> {
        let p = self.config.param_dim;
        t * p..(t + 1) * p
    }
}

impl UnrolledSystem for QuadraticScenario {
    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn state_dim(&self) -> usize {
        self.config.horizon * self.config.param_dim
    }

    fn param_dim(&self) -> usize {
        self.config.param_dim
    }

    fn init_state(&self) -> SystemState {
        SystemState::initial(vec![0.0; self.state_dim()])
    }

    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        let t = state.step_index;
        let mut values = state.values.clone();
        values[self.slot(t)].copy_from_slice(theta);
        let mut loss = 0.0;
        for tau in 0..=t {
            let applied = &values[self.slot(tau)];
            loss += self.blocks[t][tau]
                .iter()
                .zip(applied)
                .map(|(h, x)| h * x)
                .sum::<f64>();
        }
        loss += 0.5 * self.config.curvature * theta.iter().map(|x| x * x).sum::<f64>();
        (SystemState::new(values, t + 1), loss)
    }

    fn has_jacobians(&self) -> bool {
        true
    }

    fn step_jacobians(&self, state: &SystemState, theta: &[f64]) -> Option<StepJacobians> {
        let t = state.step_index;
        let p = self.config.param_dim;
        let s = self.state_dim();
        let current = self.slot(t);
        let mut h = DMatrix::identity(s, s);
        let mut f = DMatrix::zeros(s, p);
        for (j, row) in current.clone().enumerate() {
            h[(row, row)] = 0.0;
            f[(row, j)] = 1.0;
        }
        let mut loss_state = DVector::zeros(s);
        for tau in 0..=t {
            for (j, row) in self.slot(tau).enumerate() {
                loss_state[row] = self.blocks[t][tau][j];
            }
        }
        for (j, row) in current.enumerate() {
            loss_state[row] += self.config.curvature * theta[j];
        }
        Some(StepJacobians {
            state: h,
            param: f,
            loss_state,
            loss_param: DVector::zeros(p),
        })
    }
}
