use crate::error::{Error, Result};
use crate::par;
use crate::unroll::{check_params, check_window, unroll, window_gradient, SystemState, UnrolledSystem};

use super::{particle_error, GradientEstimate, NoiseSpec};

/// Persistent particle states and their perturbation accumulators `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub states: Vec<SystemState>,
    pub accumulators: Vec<Vec<f64>>,
    pub unroll_count: usize,
}

impl ParticleEnsemble {
    pub fn new<S: UnrolledSystem + ?Sized>(system: &S, n_particles: usize) -> Self {
        let init = system.init_state();
        Self {
            states: vec![init; n_particles],
            accumulators: vec![vec![0.0; system.param_dim()]; n_particles],
            unroll_count: 0,
        }
    }

    /// Returns every particle to the initial state and clears `ξ`.
    pub fn reset<S: UnrolledSystem + ?Sized>(&mut self, system: &S) {
        *self = Self::new(system, self.states.len());
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn step_index(&self) -> usize {
        self.states.first().map_or(0, |s| s.step_index)
    }

    fn check<S: UnrolledSystem + ?Sized>(&self, system: &S, noise: &NoiseSpec) -> Result<()> {
        if self.len() != noise.n_particles {
            return Err(Error::DimensionMismatch {
                expected: noise.n_particles,
                actual: self.len(),
            });
        }
        let t = self.step_index();
        if self.states.iter().any(|s| s.step_index != t) {
            return Err(Error::InvalidArgument(
                "particle states disagree on step_index".into(),
            ));
        }
        if self
            .accumulators
            .iter()
            .any(|xi| xi.len() != system.param_dim())
        {
            return Err(Error::DimensionMismatch {
                expected: system.param_dim(),
                actual: self.accumulators[0].len(),
            });
        }
        Ok(())
    }
}

fn perturbed(theta: &[f64], eps: &[f64]) -> Vec<f64> {
    theta.iter().zip(eps).map(|(t, e)| t + e).collect()
}

/// Unrolls every particle from its own start state with `θ + ε_i`.
fn unroll_particles<S: UnrolledSystem + ?Sized>(
    system: &S,
    starts: &[&SystemState],
    theta: &[f64],
    perturbations: &[Vec<f64>],
    k: usize,
) -> Result<Vec<(SystemState, f64)>> {
    let results = par::map_indexed(perturbations.len(), |i| {
        let params = perturbed(theta, &perturbations[i]);
        unroll(system, starts[i], &params, k)
            .map(|r| (r.final_state, r.loss_sum))
            .map_err(|e| particle_error(i, e))
    });
    results.into_iter().collect()
}

/// Weighted sum `Σ_i w_i L_i / (N σ²)` accumulated in ascending particle order.
fn weighted_sum(weights: &[Vec<f64>], losses: &[f64], noise: &NoiseSpec, dim: usize) -> Vec<f64> {
    let mut grad = vec![0.0; dim];
    for (w, loss) in weights.iter().zip(losses) {
        for (g, wi) in grad.iter_mut().zip(w) {
            *g += wi * loss;
        }
    }
    let scale = 1.0 / (noise.n_particles as f64 * noise.sigma * noise.sigma);
    for g in &mut grad {
        *g *= scale;
    }
    grad
}

fn summarize(losses: &[f64]) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    for l in losses {
        total += l;
    }
    let diffs = losses.chunks_exact(2).map(|p| p[0] - p[1]).collect();
    (total / losses.len() as f64, diffs)
}

/// Truncated antithetic ES over one K-step window.
///
/// All particles start from `mean_state`; their final states are discarded.
/// The returned state is `mean_state` advanced by an unperturbed unroll.
pub fn es_step<S: UnrolledSystem + ?Sized>(
    system: &S,
    mean_state: &SystemState,
    theta: &[f64],
    k: usize,
    noise: &NoiseSpec,
    outer_iter: u64,
) -> Result<(GradientEstimate, SystemState)> {
    noise.validate()?;
    check_params(system, theta)?;
    check_window(system, mean_state, k)?;
    let perturbations = noise.particle_perturbations(outer_iter, system.param_dim());
    let starts = vec![mean_state; noise.n_particles];
    let results = unroll_particles(system, &starts, theta, &perturbations, k)?;
    let losses: Vec<f64> = results.iter().map(|(_, l)| *l).collect();
    let grad = weighted_sum(&perturbations, &losses, noise, system.param_dim());
    let next_mean = unroll(system, mean_state, theta, k)?.final_state;
    let (mean_loss, pair_differences) = summarize(&losses);
    Ok((
        GradientEstimate {
            grad,
            mean_loss,
            pair_differences,
        },
        next_mean,
    ))
}

/// Persistent ES over one K-step window.
///
/// Particle states persist across calls and each accumulator is updated
/// (`ξ_i += ε_i`) before it weights the particle's loss. On error the
/// ensemble is left untouched.
pub fn pes_step<S: UnrolledSystem + ?Sized>(
    system: &S,
    ensemble: &mut ParticleEnsemble,
    theta: &[f64],
    k: usize,
    noise: &NoiseSpec,
    outer_iter: u64,
) -> Result<GradientEstimate> {
    noise.validate()?;
    check_params(system, theta)?;
    ensemble.check(system, noise)?;
    if let Some(first) = ensemble.states.first() {
        check_window(system, first, k)?;
    }
    let perturbations = noise.particle_perturbations(outer_iter, system.param_dim());
    let starts: Vec<&SystemState> = ensemble.states.iter().collect();
    let results = unroll_particles(system, &starts, theta, &perturbations, k)?;

    let accumulators: Vec<Vec<f64>> = ensemble
        .accumulators
        .iter()
        .zip(&perturbations)
        .map(|(xi, eps)| xi.iter().zip(eps).map(|(x, e)| x + e).collect())
        .collect();
    let (states, losses): (Vec<SystemState>, Vec<f64>) = results.into_iter().unzip();
    let grad = weighted_sum(&accumulators, &losses, noise, system.param_dim());

    ensemble.states = states;
    ensemble.accumulators = accumulators;
    ensemble.unroll_count += 1;
    let (mean_loss, pair_differences) = summarize(&losses);
    Ok(GradientEstimate {
        grad,
        mean_loss,
        pair_differences,
    })
}

/// PES with the analytic gradient of the most recent unperturbed window.
///
/// `p = ∇_θ` of the mean state's K-step loss. Each particle contributes
/// `ξ_i (L_i - ε_iᵀ p)` with the accumulator as it stood *before* this
/// window's perturbation; only then is `ξ_i += ε_i` applied. The estimate is
/// `Σ / (N σ²) + p`.
pub fn pes_analytic_step<S: UnrolledSystem + ?Sized>(
    system: &S,
    ensemble: &mut ParticleEnsemble,
    mean_state: &mut SystemState,
    theta: &[f64],
    k: usize,
    noise: &NoiseSpec,
    outer_iter: u64,
) -> Result<GradientEstimate> {
    if !system.has_jacobians() {
        return Err(Error::MissingJacobians {
            operation: "pes_analytic_step",
        });
    }
    noise.validate()?;
    check_params(system, theta)?;
    ensemble.check(system, noise)?;
    if mean_state.step_index != ensemble.step_index() {
        return Err(Error::InvalidArgument(format!(
            "mean state at step {} but particles at step {}",
            mean_state.step_index,
            ensemble.step_index()
        )));
    }
    let window = window_gradient(system, mean_state, theta, k)?;
    let p = window.grad;

    let perturbations = noise.particle_perturbations(outer_iter, system.param_dim());
    let starts: Vec<&SystemState> = ensemble.states.iter().collect();
    let results = unroll_particles(system, &starts, theta, &perturbations, k)?;
    let (states, losses): (Vec<SystemState>, Vec<f64>) = results.into_iter().unzip();

    let mut sum = vec![0.0; p.len()];
    for ((xi, eps), loss) in ensemble.accumulators.iter().zip(&perturbations).zip(&losses) {
        let mut along = 0.0;
        for (e, pi) in eps.iter().zip(&p) {
            along += e * pi;
        }
        let centered = loss - along;
        for (s, x) in sum.iter_mut().zip(xi) {
            *s += x * centered;
        }
    }
    let scale = 1.0 / (noise.n_particles as f64 * noise.sigma * noise.sigma);
    let grad = sum.iter().zip(&p).map(|(s, pi)| s * scale + pi).collect();

    for (xi, eps) in ensemble.accumulators.iter_mut().zip(&perturbations) {
        for (x, e) in xi.iter_mut().zip(eps) {
            *x += e;
        }
    }
    ensemble.states = states;
    ensemble.unroll_count += 1;
    *mean_state = window.final_state;
    let (mean_loss, pair_differences) = summarize(&losses);
    Ok(GradientEstimate {
        grad,
        mean_loss,
        pair_differences,
    })
}
