//! Gradient estimators over partial unrolls.
//!
//! Each estimator consumes one K-step window of the inner problem and returns
//! a [`GradientEstimate`]. Evolution-strategies estimators draw antithetic
//! perturbation pairs from per-pair counter-based streams and reduce particle
//! contributions in ascending particle index, so results do not depend on how
//! particle unrolls are scheduled across threads.

mod evolution;
mod exact;
mod online;
mod uoro;

pub use evolution::{es_step, pes_analytic_step, pes_step, ParticleEnsemble};
pub use exact::{rtrl_step, tbptt_step, RtrlState};
pub use online::{EstimatorKind, OnlineEstimator};
pub use uoro::{uoro_step, UoroState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Perturbation settings for the evolution-strategies estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of each perturbation coordinate.
    pub sigma: f64,
    /// Total particle count; particles `2j` and `2j + 1` form antithetic pair `j`.
    pub n_particles: usize,
    pub base_seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, n_particles: usize, base_seed: u64) -> Result<Self> {
        let spec = Self {
            sigma,
            n_particles,
            base_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be finite and positive, got {}",
                self.sigma
            )));
        }
        if self.n_particles < 2 || self.n_particles % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_particles must be even and at least 2, got {}",
                self.n_particles
            )));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_particles / 2
    }

    /// Positive member of antithetic pair `pair` at outer iteration `outer_iter`.
    pub fn pair_perturbation(&self, outer_iter: u64, pair: usize, dim: usize) -> Vec<f64> {
        let mut stream = rng::stream(self.base_seed, outer_iter, pair as u64);
        rng::gaussian_vector(&mut stream, dim, self.sigma)
    }

    /// Perturbations for every particle, `ε_{2j+1} = -ε_{2j}`.
    pub fn particle_perturbations(&self, outer_iter: u64, dim: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_particles);
        for pair in 0..self.n_pairs() {
            let eps = self.pair_perturbation(outer_iter, pair, dim);
            let neg = eps.iter().map(|x| -x).collect();
            out.push(eps);
            out.push(neg);
        }
        out
    }
}

/// Output of one estimator step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    /// Mean K-step loss over particles (or the window loss for exact methods).
    pub mean_loss: f64,
    /// `L(θ + ε_j) - L(θ - ε_j)` per antithetic pair; empty for exact methods.
    pub pair_differences: Vec<f64>,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

pub(crate) fn particle_error(particle: usize, err: Error) -> Error {
    match err {
        Error::NonFiniteLoss { step } => Error::NonFiniteParticleLoss { particle, step },
        other => other,
    }
}
