//! Outer optimization loop.

use std::time::Instant;

use pes_core::estimators::OnlineEstimator;
use pes_core::{unroll, UnrolledSystem};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Prepared};
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub iteration: u64,
    /// Inner step reached after this iteration's window.
    pub inner_t: usize,
    /// θ after this iteration's update.
    pub theta: Vec<f64>,
    pub grad_norm: f64,
    pub meta_loss: Option<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub param_dim: usize,
    pub rows: Vec<RunRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub iterations: u64,
    pub final_theta: Vec<f64>,
    pub initial_meta_loss: f64,
    pub final_meta_loss: f64,
    /// Lowest meta-loss seen at any evaluation, including the initial θ.
    pub best_meta_loss: f64,
}

/// Loss of one full unroll from the initial state.
pub fn meta_loss<S: UnrolledSystem + ?Sized>(system: &S, theta: &[f64]) -> Result<f64> {
    unroll(system, &system.init_state(), theta, system.horizon())
        .map(|r| r.loss_sum)
        .map_err(BenchError::runtime)
}

/// Runs the outer loop: one estimator window per iteration, resetting the
/// inner problem whenever it reaches its horizon.
pub fn run_experiment(prepared: &Prepared) -> Result<(RunLog, Summary)> {
    let cfg = &prepared.config;
    let task = &prepared.task;
    let k = cfg.estimator.k;
    let mut estimator = OnlineEstimator::new(cfg.estimator.kind, task, prepared.noise)
        .map_err(BenchError::setup)?;
    let mut optimizer = prepared.optimizer();
    let mut theta = prepared.theta0.clone();
    let horizon = task.horizon();

    let initial = meta_loss(task, &theta)?;
    let mut best = initial;
    let mut log = RunLog {
        param_dim: theta.len(),
        rows: Vec::with_capacity(cfg.experiment.iterations as usize),
    };
    let start = Instant::now();
    let iterations = cfg.experiment.iterations;
    for it in 0..iterations {
        if estimator.inner_step() >= horizon {
            estimator.reset(task);
        }
        let est = estimator
            .estimate(task, &theta, k, it)
            .map_err(BenchError::runtime)?;
        theta = optimizer
            .update(&theta, &est.grad)
            .map_err(BenchError::runtime)?;
        let evaluate = it % cfg.experiment.eval_every == 0 || it + 1 == iterations;
        let meta = if evaluate {
            let m = meta_loss(task, &theta)?;
            best = best.min(m);
            Some(m)
        } else {
            None
        };
        log.rows.push(RunRow {
            iteration: it,
            inner_t: estimator.inner_step(),
            theta: theta.clone(),
            grad_norm: est.norm(),
            meta_loss: meta,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    let final_meta = match log.rows.last() {
        Some(row) => row.meta_loss.unwrap_or(initial),
        None => initial,
    };
    let summary = Summary {
        config: cfg.clone(),
        seed: cfg.experiment.seed,
        iterations,
        final_theta: theta,
        initial_meta_loss: initial,
        final_meta_loss: final_meta,
        best_meta_loss: best,
    };
    Ok((log, summary))
}
