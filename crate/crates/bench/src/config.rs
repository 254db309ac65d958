//! Experiment configuration files (TOML).
//!
//! ```toml
//! [experiment]
//! iterations = 3000
//! seed = 0
//! eval_every = 50
//!
//! [task]
//! name = "toy2d"
//! horizon = 100
//!
//! [estimator]
//! kind = "pes"
//! k = 10
//! n_particles = 100
//! sigma = 1.0
//!
//! [optimizer]
//! kind = "adam"
//! lr = 0.01
//! ```

use std::path::Path;

use pes_core::estimators::{EstimatorKind, NoiseSpec};
use pes_core::optim::{AdamState, OuterOptimizer};
use pes_core::tasks::{make_task, Task, TaskConfig};
use pes_core::UnrolledSystem;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub task: TaskConfig,
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    /// Full-unroll meta-loss is evaluated every this many outer iterations.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
}

fn default_eval_every() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub kind: EstimatorKind,
    pub k: usize,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_particles() -> usize {
    2
}

fn default_sigma() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: OptimizerName,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            kind: OptimizerName::Adam,
            lr: AdamState::DEFAULT_LR,
            beta1: AdamState::DEFAULT_BETA1,
            beta2: AdamState::DEFAULT_BETA2,
            eps: AdamState::DEFAULT_EPS,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceGradient {
    /// Closed form when the task has one, large-population ES otherwise.
    Auto,
    Es,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Truncation lengths to sweep; defaults to `estimator.k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_values: Option<Vec<usize>>,
    #[serde(default = "default_reference")]
    pub reference: ReferenceGradient,
    #[serde(default = "default_gt_particles")]
    pub ground_truth_particles: usize,
}

fn default_trials() -> usize {
    1000
}

fn default_reference() -> ReferenceGradient {
    ReferenceGradient::Auto
}

fn default_gt_particles() -> usize {
    pes_core::variance::GROUND_TRUTH_PARTICLES
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            k_values: None,
            reference: default_reference(),
            ground_truth_particles: default_gt_particles(),
        }
    }
}

/// A validated configuration together with the objects it describes.
#[derive(Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub task: Task,
    pub theta0: Vec<f64>,
    pub noise: NoiseSpec,
}

impl Prepared {
    pub fn optimizer(&self) -> OuterOptimizer {
        let o = &self.config.optimizer;
        let base = match o.kind {
            OptimizerName::Sgd => OuterOptimizer::sgd(o.lr),
            OptimizerName::Adam => OuterOptimizer::adam(AdamState::new(
                self.theta0.len(),
                o.lr,
                o.beta1,
                o.beta2,
                o.eps,
            )),
        };
        base.with_clip(o.clip)
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> BenchError {
    BenchError::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Validates every field and builds the task, filling in the initial θ.
    pub fn prepare(mut self) -> Result<Prepared> {
        if self.experiment.eval_every == 0 {
            return Err(field("experiment.eval_every", "must be at least 1"));
        }
        if self.experiment.seed > i64::MAX as u64 {
            return Err(field("experiment.seed", "must fit in a signed 64-bit integer"));
        }
        let task = make_task(&self.task).map_err(|e| field("task", e))?;
        let horizon = task.horizon();
        let est = &self.estimator;
        if est.k == 0 || horizon % est.k != 0 {
            return Err(field(
                "estimator.k",
                format!("must divide the task horizon {horizon}, got {}", est.k),
            ));
        }
        let noise = NoiseSpec {
            sigma: est.sigma,
            n_particles: est.n_particles,
            base_seed: self.experiment.seed,
        };
        if est.kind.uses_particles() {
            noise.validate().map_err(|e| field("estimator", e))?;
        }
        if est.kind.requires_jacobians() && !task.has_jacobians() {
            return Err(field(
                "estimator.kind",
                format!("`{}` needs Jacobians, which task `{}` does not provide", est.kind, self.task.name()),
            ));
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return Err(field("optimizer.lr", "must be finite and positive"));
        }
        if let Some(c) = o.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(field("optimizer.clip", "must be finite and positive"));
            }
        }
        let theta0 = self
            .init
            .theta
            .clone()
            .unwrap_or_else(|| self.task.default_theta());
        if theta0.len() != task.param_dim() {
            return Err(field(
                "init.theta",
                format!("expected {} values, got {}", task.param_dim(), theta0.len()),
            ));
        }
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(field("init.theta", "values must be finite"));
        }
        if let Some(v) = &self.variance {
            if v.trials < 2 {
                return Err(field("variance.trials", "must be at least 2"));
            }
            for k in v.k_values.iter().flatten() {
                if *k == 0 || horizon % k != 0 {
                    return Err(field(
                        "variance.k_values",
                        format!("{k} does not divide the task horizon {horizon}"),
                    ));
                }
            }
        }
        self.init.theta = Some(theta0.clone());
        Ok(Prepared {
            config: self,
            task,
            theta0,
            noise,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
[experiment]
iterations = 10
seed = 3

[task]
name = "toy2d"
horizon = 20

[estimator]
kind = "pes"
k = 5
n_particles = 4
sigma = 1.0
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(TOY).unwrap();
        assert_eq!(cfg.experiment.eval_every, 50);
        assert_eq!(cfg.optimizer.kind, OptimizerName::Adam);
        let p = cfg.prepare().unwrap();
        assert_eq!(p.theta0, vec![0.01f64.ln(); 2]);
        assert_eq!(p.noise.base_seed, 3);
    }

    #[test]
    fn resolved_config_round_trips() {
        let p = ExperimentConfig::from_toml(TOY).unwrap().prepare().unwrap();
        let text = p.config.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), p.config);
    }

    #[test]
    fn field_level_errors() {
        let bad_k = TOY.replace("k = 5", "k = 3");
        let err = ExperimentConfig::from_toml(&bad_k).unwrap().prepare().unwrap_err();
        assert!(err.to_string().contains("estimator.k"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let odd = TOY.replace("n_particles = 4", "n_particles = 3");
        assert!(ExperimentConfig::from_toml(&odd).unwrap().prepare().is_err());

        let unknown = TOY.replace("seed = 3", "seed = 3\nspeed = 1");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());

        let no_jac = TOY
            .replace("name = \"toy2d\"\nhorizon = 20", "name = \"mlp\"\nhorizon = 20")
            .replace("kind = \"pes\"", "kind = \"rtrl\"");
        let err = ExperimentConfig::from_toml(&no_jac).unwrap().prepare().unwrap_err();
        assert!(err.to_string().contains("Jacobians"), "{err}");

        let theta = format!("{TOY}\n[init]\ntheta = [1.0]\n");
        assert!(ExperimentConfig::from_toml(&theta).unwrap().prepare().is_err());
    }
}
