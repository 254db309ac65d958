use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::unroll::{check_params, check_window, window_gradient, SystemState, UnrolledSystem};

use super::GradientEstimate;

/// Truncated backpropagation: the exact gradient of this window's loss with
/// the entering state held constant. Advances `mean_state` by K steps.
pub fn tbptt_step<S: UnrolledSystem + ?Sized>(
    system: &S,
    mean_state: &mut SystemState,
    theta: &[f64],
    k: usize,
) -> Result<GradientEstimate> {
    if !system.has_jacobians() {
        return Err(Error::MissingJacobians {
            operation: "tbptt_step",
        });
    }
    let window = window_gradient(system, mean_state, theta, k)?;
    *mean_state = window.final_state;
    Ok(GradientEstimate {
        grad: window.grad,
        mean_loss: window.loss_sum,
        pair_differences: Vec::new(),
    })
}

/// Forward-mode sensitivity `G_t = ds_t/dθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RtrlState {
    pub jacobian: DMatrix<f64>,
}

impl RtrlState {
    pub fn new<S: UnrolledSystem + ?Sized>(system: &S) -> Self {
        Self {
            jacobian: DMatrix::zeros(system.state_dim(), system.param_dim()),
        }
    }

    pub fn reset(&mut self) {
        self.jacobian.fill(0.0);
    }
}

/// Real-time recurrent learning over K steps: `G ← H_t G + F_t` and each step
/// contributes `(∂L_t/∂s_t) G + ∂L_t/∂θ`.
pub fn rtrl_step<S: UnrolledSystem + ?Sized>(
    system: &S,
    state: &mut SystemState,
    jstate: &mut RtrlState,
    theta: &[f64],
    k: usize,
) -> Result<GradientEstimate> {
    if !system.has_jacobians() {
        return Err(Error::MissingJacobians {
            operation: "rtrl_step",
        });
    }
    check_window(system, state, k)?;
    check_params(system, theta)?;
    let shape = (system.state_dim(), system.param_dim());
    if jstate.jacobian.shape() != shape {
        return Err(Error::InvalidArgument(format!(
            "RTRL Jacobian has shape {:?}, system needs {:?}",
            jstate.jacobian.shape(),
            shape
        )));
    }

    let mut g = jstate.jacobian.clone();
    let mut current = state.clone();
    let mut grad = DVector::zeros(system.param_dim());
    let mut loss_sum = 0.0;
    for _ in 0..k {
        let jac = system
            .step_jacobians(&current, theta)
            .ok_or(Error::MissingJacobians {
                operation: "rtrl_step",
            })?;
        let (next, loss) = system.step(&current, theta);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: next.step_index,
            });
        }
        g = &jac.state * &g + &jac.param;
        grad += g.tr_mul(&jac.loss_state) + &jac.loss_param;
        loss_sum += loss;
        current = next;
    }
    *state = current;
    jstate.jacobian = g;
    Ok(GradientEstimate {
        grad: grad.iter().copied().collect(),
        mean_loss: loss_sum,
        pair_differences: Vec::new(),
    })
}
