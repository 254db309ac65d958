use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::unroll::{SystemState, UnrolledSystem};

use super::{
    es_step, pes_analytic_step, pes_step, rtrl_step, tbptt_step, uoro_step, GradientEstimate,
    NoiseSpec, ParticleEnsemble, RtrlState, UoroState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Es,
    Pes,
    PesAnalytic,
    Tbptt,
    Rtrl,
    Uoro,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Es,
        EstimatorKind::Pes,
        EstimatorKind::PesAnalytic,
        EstimatorKind::Tbptt,
        EstimatorKind::Rtrl,
        EstimatorKind::Uoro,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Es => "es",
            EstimatorKind::Pes => "pes",
            EstimatorKind::PesAnalytic => "pes_analytic",
            EstimatorKind::Tbptt => "tbptt",
            EstimatorKind::Rtrl => "rtrl",
            EstimatorKind::Uoro => "uoro",
        }
    }

    /// Whether the estimator draws antithetic particle perturbations.
    pub fn uses_particles(self) -> bool {
        matches!(
            self,
            EstimatorKind::Es | EstimatorKind::Pes | EstimatorKind::PesAnalytic
        )
    }

    pub fn requires_jacobians(self) -> bool {
        !matches!(self, EstimatorKind::Es | EstimatorKind::Pes)
    }

    pub fn is_stochastic(self) -> bool {
        self.uses_particles() || self == EstimatorKind::Uoro
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone)]
enum Carry {
    Es {
        mean: SystemState,
    },
    Pes {
        ensemble: ParticleEnsemble,
    },
    PesAnalytic {
        ensemble: ParticleEnsemble,
        mean: SystemState,
    },
    Tbptt {
        mean: SystemState,
    },
    Rtrl {
        state: SystemState,
        jacobian: RtrlState,
    },
    Uoro {
        state: SystemState,
        factors: UoroState,
    },
}

/// Uniform driver that owns an estimator's carried state between windows.
#[derive(Debug, Clone)]
pub struct OnlineEstimator {
    kind: EstimatorKind,
    noise: NoiseSpec,
    carry: Carry,
}

impl OnlineEstimator {
    /// `noise.base_seed` also seeds UORO's sign vectors; `sigma` and
    /// `n_particles` are only validated for particle-based estimators.
    pub fn new<S: UnrolledSystem + ?Sized>(
        kind: EstimatorKind,
        system: &S,
        noise: NoiseSpec,
    ) -> Result<Self> {
        if kind.uses_particles() {
            noise.validate()?;
        }
        if kind.requires_jacobians() && !system.has_jacobians() {
            return Err(Error::MissingJacobians {
                operation: kind.name(),
            });
        }
        Ok(Self {
            kind,
            noise,
            carry: Self::fresh(kind, system, &noise),
        })
    }

    fn fresh<S: UnrolledSystem + ?Sized>(
        kind: EstimatorKind,
        system: &S,
        noise: &NoiseSpec,
    ) -> Carry {
        let init = system.init_state();
        match kind {
            EstimatorKind::Es => Carry::Es { mean: init },
            EstimatorKind::Pes => Carry::Pes {
                ensemble: ParticleEnsemble::new(system, noise.n_particles),
            },
            EstimatorKind::PesAnalytic => Carry::PesAnalytic {
                ensemble: ParticleEnsemble::new(system, noise.n_particles),
                mean: init,
            },
            EstimatorKind::Tbptt => Carry::Tbptt { mean: init },
            EstimatorKind::Rtrl => Carry::Rtrl {
                state: init,
                jacobian: RtrlState::new(system),
            },
            EstimatorKind::Uoro => Carry::Uoro {
                state: init,
                factors: UoroState::new(system),
            },
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Start of a new inner problem: initial states, zero accumulators and
    /// zero sensitivities.
    pub fn reset<S: UnrolledSystem + ?Sized>(&mut self, system: &S) {
        self.carry = Self::fresh(self.kind, system, &self.noise);
    }

    /// Inner step index the next window starts from.
    pub fn inner_step(&self) -> usize {
        match &self.carry {
            Carry::Es { mean } | Carry::Tbptt { mean } => mean.step_index,
            Carry::Pes { ensemble } => ensemble.step_index(),
            Carry::PesAnalytic { mean, .. } => mean.step_index,
            Carry::Rtrl { state, .. } | Carry::Uoro { state, .. } => state.step_index,
        }
    }

    pub fn ensemble(&self) -> Option<&ParticleEnsemble> {
        match &self.carry {
            Carry::Pes { ensemble } | Carry::PesAnalytic { ensemble, .. } => Some(ensemble),
            _ => None,
        }
    }

    /// Consumes the next K-step window and returns its gradient estimate.
    pub fn estimate<S: UnrolledSystem + ?Sized>(
        &mut self,
        system: &S,
        theta: &[f64],
        k: usize,
        outer_iter: u64,
    ) -> Result<GradientEstimate> {
        let noise = &self.noise;
        match &mut self.carry {
            Carry::Es { mean } => {
                let (est, next) = es_step(system, mean, theta, k, noise, outer_iter)?;
                *mean = next;
                Ok(est)
            }
            Carry::Pes { ensemble } => pes_step(system, ensemble, theta, k, noise, outer_iter),
            Carry::PesAnalytic { ensemble, mean } => {
                pes_analytic_step(system, ensemble, mean, theta, k, noise, outer_iter)
            }
            Carry::Tbptt { mean } => tbptt_step(system, mean, theta, k),
            Carry::Rtrl { state, jacobian } => rtrl_step(system, state, jacobian, theta, k),
            Carry::Uoro { state, factors } => {
                let seed = rng::mix(noise.base_seed, outer_iter, 0x756f_726f);
                uoro_step(system, state, factors, theta, k, seed)
            }
        }
    }
}
