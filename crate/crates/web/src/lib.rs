//! Browser demo bindings: the toy 2-D meta-loss surface, ES vs PES
//! optimization paths on it, and PES variance as the horizon is split into
//! more unrolls.

use pes_core::estimators::{EstimatorKind, NoiseSpec, OnlineEstimator};
use pes_core::optim::{AdamState, OuterOptimizer};
use pes_core::tasks::{Correlation, QuadraticConfig, QuadraticScenario, Structure, Toy2d, Toy2dConfig};
use pes_core::variance::{empirical_variance, exact_linear_variance};
use pes_core::{unroll, UnrolledSystem};
use wasm_bindgen::prelude::*;

fn toy(horizon: usize) -> Result<Toy2d, String> {
    Toy2d::new(&Toy2dConfig {
        horizon,
        ..Default::default()
    })
    .map_err(|e| e.to_string())
}

fn meta_loss(sys: &Toy2d, theta: &[f64]) -> Result<f64, String> {
    unroll(sys, &sys.init_state(), theta, sys.horizon())
        .map(|r| r.loss_sum)
        .map_err(|e| e.to_string())
}

/// Row-major `n × n` grid of `log10` meta-loss over `θ ∈ [lo, hi]²`;
/// rows index `θ_1`, columns `θ_0`.
pub fn surface(lo: f64, hi: f64, n: usize, horizon: usize) -> Result<Vec<f64>, String> {
    if n < 2 || !(hi > lo) {
        return Err("grid needs n >= 2 and hi > lo".into());
    }
    let sys = toy(horizon)?;
    let step = (hi - lo) / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let theta = [lo + j as f64 * step, lo + i as f64 * step];
            let m = meta_loss(&sys, &theta)?;
            out.push(if m.is_finite() { m.max(1e-300).log10() } else { f64::NAN });
        }
    }
    Ok(out)
}

fn estimator_kind(name: &str) -> Result<EstimatorKind, String> {
    match name {
        "es" => Ok(EstimatorKind::Es),
        "pes" => Ok(EstimatorKind::Pes),
        other => Err(format!("unknown estimator `{other}`, expected `es` or `pes`")),
    }
}

/// Adam trajectory from `theta0`, flattened as `[θ_0, θ_1, meta-loss]` per
/// recorded iteration (every `record_every` steps plus the last).
#[allow(clippy::too_many_arguments)]
pub fn trajectory(
    estimator: &str,
    theta0: [f64; 2],
    iterations: usize,
    k: usize,
    n_particles: usize,
    sigma: f64,
    lr: f64,
    seed: u64,
    record_every: usize,
) -> Result<Vec<f64>, String> {
    let sys = toy(100)?;
    let kind = estimator_kind(estimator)?;
    if k == 0 || sys.horizon() % k != 0 {
        return Err(format!("K = {k} must divide the horizon {}", sys.horizon()));
    }
    let noise = NoiseSpec::new(sigma, n_particles, seed).map_err(|e| e.to_string())?;
    let mut est = OnlineEstimator::new(kind, &sys, noise).map_err(|e| e.to_string())?;
    let mut adam = AdamState::with_defaults(2);
    adam.lr = lr;
    let mut opt = OuterOptimizer::adam(adam);
    let mut theta = theta0.to_vec();
    let every = record_every.max(1);
    let mut out = vec![theta[0], theta[1], meta_loss(&sys, &theta)?];
    for it in 0..iterations {
        if est.inner_step() >= sys.horizon() {
            est.reset(&sys);
        }
        let g = est.estimate(&sys, &theta, k, it as u64).map_err(|e| e.to_string())?;
        theta = opt.update(&theta, &g.grad).map_err(|e| e.to_string())?;
        if (it + 1) % every == 0 || it + 1 == iterations {
            out.extend([theta[0], theta[1], meta_loss(&sys, &theta)?]);
        }
    }
    Ok(out)
}

/// For every `K` dividing `horizon`, `[T/K, empirical tr Var, exact tr Var]`
/// of one antithetic PES pair on a diagonal quadratic with identical blocks.
pub fn variance_curve(
    param_dim: usize,
    horizon: usize,
    trials: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let q = QuadraticScenario::new(&QuadraticConfig {
        param_dim,
        horizon,
        structure: Structure::Diagonal,
        correlation: Correlation::Identical,
        g_norm: 1.0,
        curvature: 0.0,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let theta = vec![0.0; param_dim];
    let g = q.analytic_gradient(&theta);
    let noise = NoiseSpec::new(sigma, 2, seed).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for k in (1..=horizon).rev().filter(|k| horizon % k == 0) {
        let r = empirical_variance(&q, EstimatorKind::Pes, k, noise, &theta, trials, &g)
            .map_err(|e| e.to_string())?;
        let exact = exact_linear_variance(&q, &theta, k, 2).map_err(|e| e.to_string())?;
        out.extend([(horizon / k) as f64, r.total_variance, exact]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = metaLossSurface)]
pub fn meta_loss_surface(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    surface(lo, hi, n, 100).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = optimizePath)]
#[allow(clippy::too_many_arguments)]
pub fn optimize_path(
    estimator: &str,
    theta0: f64,
    theta1: f64,
    iterations: usize,
    k: usize,
    n_particles: usize,
    sigma: f64,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    trajectory(estimator, [theta0, theta1], iterations, k, n_particles, sigma, 1e-2, seed as u64, 10)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = varianceCurve)]
pub fn variance_curve_js(param_dim: usize, horizon: usize, trials: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    variance_curve(param_dim, horizon, trials, 0.3, seed as u64).map_err(|e| JsValue::from_str(&e))
}
