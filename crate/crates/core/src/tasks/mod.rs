//! Concrete unrolled systems.

pub mod idx;
mod influence;
mod mlp;
mod quadratic;
mod toy2d;

pub use idx::{load_idx_dataset, Dataset};
pub use influence::{InfluenceBalancing, InfluenceConfig};
pub use mlp::{two_gaussians, LrDecayMlp, MlpConfig, MlpObjective};
pub use quadratic::{Correlation, QuadraticConfig, QuadraticScenario, Structure};
pub use toy2d::{inner_grad, inner_hessian, inner_loss, Toy2d, Toy2dConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unroll::{full_gradient, unroll, StepJacobians, SystemState, UnrolledSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TaskConfig {
    InfluenceBalancing(InfluenceConfig),
    Toy2d(Toy2dConfig),
    Quadratic(QuadraticConfig),
    Mlp(MlpConfig),
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::InfluenceBalancing(_) => "influence_balancing",
            TaskConfig::Toy2d(_) => "toy2d",
            TaskConfig::Quadratic(_) => "quadratic",
            TaskConfig::Mlp(_) => "mlp",
        }
    }

    /// Default configuration for a task name.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "influence_balancing" => TaskConfig::InfluenceBalancing(Default::default()),
            "toy2d" => TaskConfig::Toy2d(Default::default()),
            "quadratic" => TaskConfig::Quadratic(Default::default()),
            "mlp" => TaskConfig::Mlp(Default::default()),
            other => return Err(Error::UnknownTask(other.to_string())),
        })
    }

    /// Parameter vector the task is usually started from.
    pub fn default_theta(&self) -> Vec<f64> {
        match self {
            TaskConfig::InfluenceBalancing(_) => vec![0.5],
            TaskConfig::Toy2d(_) => vec![0.01f64.ln(); 2],
            TaskConfig::Quadratic(c) => vec![0.0; c.param_dim],
            TaskConfig::Mlp(_) => vec![0.1f64.ln(), 0.5],
        }
    }
}

pub const TASK_NAMES: [&str; 4] = ["influence_balancing", "toy2d", "quadratic", "mlp"];

#[derive(Debug, Clone)]
pub enum Task {
    InfluenceBalancing(InfluenceBalancing),
    Toy2d(Toy2d),
    Quadratic(QuadraticScenario),
    Mlp(LrDecayMlp),
}

pub fn make_task(config: &TaskConfig) -> Result<Task> {
    Ok(match config {
        TaskConfig::InfluenceBalancing(c) => Task::InfluenceBalancing(InfluenceBalancing::new(c)?),
        TaskConfig::Toy2d(c) => Task::Toy2d(Toy2d::new(c)?),
        TaskConfig::Quadratic(c) => Task::Quadratic(QuadraticScenario::new(c)?),
        TaskConfig::Mlp(c) => Task::Mlp(LrDecayMlp::new(c)?),
    })
}

macro_rules! dispatch {
    ($self:expr, $t:ident => $body:expr) => {
        match $self {
            Task::InfluenceBalancing($t) => $body,
            Task::Toy2d($t) => $body,
            Task::Quadratic($t) => $body,
            Task::Mlp($t) => $body,
        }
    };
}

impl Task {
    /// Closed-form gradient of the summed loss, when the task has one.
    pub fn analytic_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        match self {
            Task::Quadratic(q) => Some(q.analytic_gradient(theta)),
            _ => None,
        }
    }

    fn near_kink(&self, theta: &[f64]) -> bool {
        match self {
            Task::Toy2d(t) => t.visits_kink(theta, 1e-6),
            _ => false,
        }
    }
}

impl UnrolledSystem for Task {
    fn horizon(&self) -> usize {
        dispatch!(self, t => t.horizon())
    }
    fn state_dim(&self) -> usize {
        dispatch!(self, t => t.state_dim())
    }
    fn param_dim(&self) -> usize {
        dispatch!(self, t => t.param_dim())
    }
    fn init_state(&self) -> SystemState {
        dispatch!(self, t => t.init_state())
    }
    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        dispatch!(self, t => t.step(state, theta))
    }
    fn has_jacobians(&self) -> bool {
        dispatch!(self, t => t.has_jacobians())
    }
    fn step_jacobians(&self, state: &SystemState, theta: &[f64]) -> Option<StepJacobians> {
        dispatch!(self, t => t.step_jacobians(state, theta))
    }
}

/// One coordinate of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Set when the trajectory touches a non-differentiable point and the
    /// comparison was skipped.
    pub skipped_kink: bool,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.skipped_kink || self.max_relative_error() <= tol
    }
}

/// Compares [`full_gradient`] with central differences using
/// `h = 1e-5·(1 + |θ_j|)`. Relative error is taken against
/// `max(|analytic|, |fd|, 1e-8)`.
pub fn gradcheck(task: &Task, theta: &[f64]) -> Result<GradCheckReport> {
    if !task.has_jacobians() {
        return Err(Error::MissingJacobians {
            operation: "gradcheck",
        });
    }
    if task.near_kink(theta) {
        return Ok(GradCheckReport {
            entries: Vec::new(),
            skipped_kink: true,
        });
    }
    let analytic = full_gradient(task, theta)?;
    let horizon = task.horizon();
    let total = |th: &[f64]| unroll(task, &task.init_state(), th, horizon).map(|r| r.loss_sum);
    let mut entries = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let h = 1e-5 * (1.0 + theta[j].abs());
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let fd = (total(&up)? - total(&dn)?) / (2.0 * h);
        let scale = analytic[j].abs().max(fd.abs()).max(1e-8);
        entries.push(GradCheckEntry {
            index: j,
            analytic: analytic[j],
            finite_difference: fd,
            relative_error: (analytic[j] - fd).abs() / scale,
        });
    }
    Ok(GradCheckReport {
        entries,
        skipped_kink: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build() {
        for name in TASK_NAMES {
            let cfg = TaskConfig::default_for(name).unwrap();
            assert_eq!(cfg.name(), name);
            let task = make_task(&cfg).unwrap();
            assert_eq!(task.param_dim(), cfg.default_theta().len());
        }
        assert!(matches!(
            TaskConfig::default_for("swimmer"),
            Err(Error::UnknownTask(_))
        ));
    }

    #[test]
    fn influence_defaults() {
        let t = make_task(&TaskConfig::default_for("influence_balancing").unwrap()).unwrap();
        assert_eq!((t.state_dim(), t.param_dim()), (23, 1));
        assert!(t.has_jacobians());
    }

    #[test]
    fn jacobian_bearing_tasks_pass_gradcheck() {
        for name in ["influence_balancing", "toy2d", "quadratic"] {
            let cfg = TaskConfig::default_for(name).unwrap();
            let task = make_task(&cfg).unwrap();
            let report = gradcheck(&task, &cfg.default_theta()).unwrap();
            assert!(report.passes(1e-4), "{name}: {report:?}");
            assert!(!report.skipped_kink);
        }
    }

    #[test]
    fn mlp_has_no_jacobians() {
        let task = make_task(&TaskConfig::default_for("mlp").unwrap()).unwrap();
        assert!(gradcheck(&task, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn config_parses_by_name() {
        let cfg: TaskConfig =
            serde_json::from_str(r#"{"name": "toy2d", "horizon": 50}"#).unwrap();
        assert_eq!(
            cfg,
            TaskConfig::Toy2d(Toy2dConfig {
                horizon: 50,
                ..Default::default()
            })
        );
        assert!(serde_json::from_str::<TaskConfig>(r#"{"name": "toy2d", "bogus": 1}"#).is_err());
    }
}
