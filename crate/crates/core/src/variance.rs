//! Empirical and closed-form estimator variance.
//!
//! Variance trials hold θ fixed and sum the estimates from every window of
//! one inner problem, so the measured spread is the estimator's own and not
//! the result of θ drifting between windows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{es_step, EstimatorKind, NoiseSpec, OnlineEstimator};
use crate::par;
use crate::rng;
use crate::tasks::{QuadraticScenario, Structure, Task};
use crate::unroll::UnrolledSystem;

/// Number of batches used for the standard error of the total variance.
pub const SE_BATCHES: usize = 20;

const TRIAL_SALT: u64 = 0x7472_6961_6c73;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    /// `tr Var(ĝ)`, unbiased across trials.
    pub total_variance: f64,
    /// `total_variance / ‖g_ref‖²`.
    pub normalized: f64,
    pub n_trials: usize,
    /// Standard error of `total_variance` from batching.
    pub standard_error: f64,
    pub per_coordinate: Vec<f64>,
    pub mean: Vec<f64>,
    /// Standard error of each coordinate of `mean`.
    pub mean_standard_error: Vec<f64>,
}

fn per_coordinate_variance(samples: &[Vec<f64>], mean: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let mut var = vec![0.0; mean.len()];
    for s in samples {
        for (j, v) in var.iter_mut().enumerate() {
            let d = s[j] - mean[j];
            *v += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n - 1.0);
    var
}

fn mean_of(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; samples[0].len()];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Summarises per-trial gradient vectors. Batch count is `min(20, n/2)`;
/// trials past the last full batch are left out of the standard error only.
pub fn summarize_trials(samples: &[Vec<f64>], reference: &[f64]) -> Result<VarianceReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance needs at least 2 trials, got {n}"
        )));
    }
    let mean = mean_of(samples);
    let per_coordinate = per_coordinate_variance(samples, &mean);
    let total_variance: f64 = per_coordinate.iter().sum();

    let n_batches = SE_BATCHES.min(n / 2);
    let size = n / n_batches;
    let batch_totals: Vec<f64> = (0..n_batches)
        .map(|b| {
            let chunk = &samples[b * size..(b + 1) * size];
            let m = mean_of(chunk);
            per_coordinate_variance(chunk, &m).iter().sum()
        })
        .collect();
    let standard_error = if n_batches >= 2 {
        let bm = batch_totals.iter().sum::<f64>() / n_batches as f64;
        let bv = batch_totals.iter().map(|x| (x - bm).powi(2)).sum::<f64>()
            / (n_batches as f64 - 1.0);
        (bv / n_batches as f64).sqrt()
    } else {
        f64::NAN
    };

    let ref_sq: f64 = reference.iter().map(|g| g * g).sum();
    Ok(VarianceReport {
        total_variance,
        normalized: total_variance / ref_sq,
        n_trials: n,
        standard_error,
        mean_standard_error: per_coordinate
            .iter()
            .map(|v| (v / n as f64).sqrt())
            .collect(),
        per_coordinate,
        mean,
    })
}

/// Seed used by trial `trial` of a variance experiment.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    rng::mix(base_seed, trial as u64, TRIAL_SALT)
}

/// Sum of the estimates over all `T/K` windows of one inner problem with θ
/// frozen; window `w` uses outer iteration `w` in the seed schedule.
pub fn inner_problem_estimate<S: UnrolledSystem + ?Sized>(
    system: &S,
    kind: EstimatorKind,
    k: usize,
    noise: NoiseSpec,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let t = system.horizon();
    if k == 0 || t % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {t} is not divisible by K = {k}"
        )));
    }
    let mut est = OnlineEstimator::new(kind, system, noise)?;
    let mut total = vec![0.0; system.param_dim()];
    for w in 0..t / k {
        let g = est.estimate(system, theta, k, w as u64)?;
        for (a, b) in total.iter_mut().zip(&g.grad) {
            *a += b;
        }
    }
    Ok(total)
}

/// Runs `n_trials` independent inner problems and reports the spread of their
/// summed estimates. Trials are evaluated in parallel and aggregated in trial
/// order.
#[allow(clippy::too_many_arguments)]
pub fn empirical_variance<S: UnrolledSystem + ?Sized>(
    system: &S,
    kind: EstimatorKind,
    k: usize,
    noise: NoiseSpec,
    theta: &[f64],
    n_trials: usize,
    reference: &[f64],
) -> Result<VarianceReport> {
    if n_trials < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance needs at least 2 trials, got {n_trials}"
        )));
    }
    let samples: Vec<Result<Vec<f64>>> = par::map_indexed(n_trials, |trial| {
        let spec = NoiseSpec {
            base_seed: trial_seed(noise.base_seed, trial),
            ..noise
        };
        inner_problem_estimate(system, kind, k, spec, theta)
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    summarize_trials(&samples, reference)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    /// Full-horizon antithetic ES estimate of the smoothed gradient.
    pub es: Vec<f64>,
    pub es_standard_error: Vec<f64>,
    pub analytic: Option<Vec<f64>>,
}

impl GroundTruth {
    /// The analytic gradient when known, the ES estimate otherwise.
    pub fn best(&self) -> &[f64] {
        self.analytic.as_deref().unwrap_or(&self.es)
    }
}

pub const GROUND_TRUTH_PARTICLES: usize = 5000;

/// Vanilla ES over the whole horizon with many particles, plus the exact
/// gradient when the task has a closed form.
pub fn ground_truth_gradient(
    task: &Task,
    theta: &[f64],
    sigma: f64,
    n_particles: usize,
    seed: u64,
) -> Result<GroundTruth> {
    let noise = NoiseSpec::new(sigma, n_particles, seed)?;
    let (est, _) = es_step(task, &task.init_state(), theta, task.horizon(), &noise, 0)?;
    let p = task.param_dim();
    let pairs = noise.n_pairs();
    let mut contrib = Vec::with_capacity(pairs);
    for (j, diff) in est.pair_differences.iter().enumerate() {
        let eps = noise.pair_perturbation(0, j, p);
        contrib.push(
            eps.iter()
                .map(|e| e * diff / (2.0 * sigma * sigma))
                .collect::<Vec<_>>(),
        );
    }
    let se = if pairs >= 2 {
        let m = mean_of(&contrib);
        per_coordinate_variance(&contrib, &m)
            .iter()
            .map(|v| (v / pairs as f64).sqrt())
            .collect()
    } else {
        vec![f64::NAN; p]
    };
    Ok(GroundTruth {
        es: est.grad,
        es_standard_error: se,
        analytic: task.analytic_gradient(theta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DiagIdentical,
    DiagIid,
    UppertriIdentical,
    UppertriIid,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::DiagIdentical,
        Scenario::DiagIid,
        Scenario::UppertriIdentical,
        Scenario::UppertriIid,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticVariance {
    pub value: f64,
    /// The closed form only fixes the growth rate, not the constant.
    pub leading_order: bool,
}

fn uppertri_polynomial(p: f64, t: f64) -> f64 {
    5.0 / 12.0 * t.powi(4) + 2.0 / 3.0 * p * t.powi(3) + 0.5 * p * t * t - p * t / 6.0
        + 0.5 * t.powi(3)
        + 7.0 / 12.0 * t * t
        + 0.5 * t
}

/// Published single-pair total-variance formulas for PES with one step per
/// unroll, in units where `g_norm_sq = ‖g‖²`.
pub fn analytic_variance(scenario: Scenario, p: usize, t: usize, g_norm_sq: f64) -> AnalyticVariance {
    let (p, t) = (p as f64, t as f64);
    let tri = t * (t + 1.0);
    let (value, leading_order) = match scenario {
        Scenario::DiagIdentical => (g_norm_sq * (p / (2.0 * t) + p / 2.0 + 1.0), false),
        Scenario::DiagIid => (g_norm_sq * (p * t / 2.0 + p / 2.0 + t), false),
        Scenario::UppertriIdentical => {
            let h_sq = (2.0 / tri).powi(2) * g_norm_sq;
            (h_sq * uppertri_polynomial(p, t), false)
        }
        Scenario::UppertriIid => {
            let h_sq = 2.0 / tri * g_norm_sq;
            (h_sq * uppertri_polynomial(p, t), true)
        }
    };
    AnalyticVariance {
        value,
        leading_order,
    }
}

/// Exact total variance of PES (or ES when `k = T`) on a quadratic scenario.
///
/// The difference of antithetic window losses is linear in the perturbations,
/// so one pair's estimate is a Gaussian quadratic form `ĝ_k = zᵀ B_k z` in the
/// standardised perturbations `z`. Its variance is `2‖sym(B_k)‖_F²`; `N`
/// particles average `N/2` independent pairs.
pub fn exact_linear_variance(
    q: &QuadraticScenario,
    theta: &[f64],
    k: usize,
    n_particles: usize,
) -> Result<f64> {
    let cfg = q.config();
    let (p, t) = (cfg.param_dim, cfg.horizon);
    if k == 0 || t % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {t} is not divisible by K = {k}"
        )));
    }
    if n_particles < 2 || n_particles % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "n_particles must be even and at least 2, got {n_particles}"
        )));
    }
    let w_count = t / k;
    // agg[w][u]: sensitivity of window w's loss to window u's perturbation.
    let mut agg = vec![vec![vec![0.0; p]; w_count]; w_count];
    for step in 0..t {
        let w = step / k;
        for tau in 0..=step {
            if cfg.structure == Structure::Diagonal && tau != step {
                continue;
            }
            let u = tau / k;
            let h = q.block(tau, step);
            for j in 0..p {
                agg[w][u][j] += h[j];
            }
        }
        for j in 0..p {
            agg[w][w][j] += cfg.curvature * theta[j];
        }
    }
    let dim = w_count * p;
    let mut total = 0.0;
    for coord in 0..p {
        let mut b = DMatrix::zeros(dim, dim);
        for v in 0..w_count {
            for u in 0..w_count {
                for j in 0..p {
                    let s: f64 = (v.max(u)..w_count).map(|w| agg[w][u][j]).sum();
                    b[(v * p + coord, u * p + j)] += s;
                }
            }
        }
        let sym = (&b + b.transpose()) * 0.5;
        total += 2.0 * sym.norm_squared();
    }
    Ok(total / (n_particles / 2) as f64)
}
