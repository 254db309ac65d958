//! The unrolled-system abstraction and the K-step unroll primitive.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// State of an unrolled system together with the number of steps taken since
/// the start of the inner problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub values: Vec<f64>,
    pub step_index: usize,
}

impl SystemState {
    pub fn new(values: Vec<f64>, step_index: usize) -> Self {
        Self { values, step_index }
    }

    pub fn initial(values: Vec<f64>) -> Self {
        Self::new(values, 0)
    }
}

/// Local derivatives of a single step `s_t = f(s_{t-1}; θ)` with loss `L_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    /// `∂s_t/∂s_{t-1}`, S×S.
    pub state: DMatrix<f64>,
    /// `∂s_t/∂θ`, S×P.
    pub param: DMatrix<f64>,
    /// `∂L_t/∂s_t`, length S.
    pub loss_state: DVector<f64>,
    /// Direct `∂L_t/∂θ`, length P.
    pub loss_param: DVector<f64>,
}

/// A deterministic dynamical system unrolled over a fixed horizon.
///
/// `step` must be a pure function of `(state, θ)` and whatever fixed data the
/// system owns, so that concurrent unrolls over distinct states are safe.
pub trait UnrolledSystem: Send + Sync {
    /// Total number of steps `T` in one inner problem.
    fn horizon(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn init_state(&self) -> SystemState;

    /// Advances one step, returning the next state (with `step_index + 1`)
    /// and the loss of that next state.
    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64);

    fn has_jacobians(&self) -> bool {
        false
    }

    /// Jacobians of the step taken from `state`. `None` when unsupported.
    fn step_jacobians(&self, _state: &SystemState, _theta: &[f64]) -> Option<StepJacobians> {
        None
    }
}

impl<T: UnrolledSystem + ?Sized> UnrolledSystem for Box<T> {
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn init_state(&self) -> SystemState {
        (**self).init_state()
    }
    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        (**self).step(state, theta)
    }
    fn has_jacobians(&self) -> bool {
        (**self).has_jacobians()
    }
    fn step_jacobians(&self, state: &SystemState, theta: &[f64]) -> Option<StepJacobians> {
        (**self).step_jacobians(state, theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollResult {
    pub final_state: SystemState,
    pub loss_sum: f64,
    /// Only populated by [`unroll_retaining`].
    pub per_step_losses: Option<Vec<f64>>,
}

pub(crate) fn check_window<S: UnrolledSystem + ?Sized>(
    system: &S,
    state: &SystemState,
    k: usize,
) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("unroll length K must be at least 1".into()));
    }
    if state.step_index + k > system.horizon() {
        return Err(Error::HorizonOverflow {
            step_index: state.step_index,
            k,
            horizon: system.horizon(),
        });
    }
    Ok(())
}

pub(crate) fn check_params<S: UnrolledSystem + ?Sized>(system: &S, theta: &[f64]) -> Result<()> {
    if theta.len() != system.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.param_dim(),
            actual: theta.len(),
        });
    }
    Ok(())
}

fn unroll_impl<S: UnrolledSystem + ?Sized>(
    system: &S,
    state: &SystemState,
    theta: &[f64],
    k: usize,
    retain: bool,
) -> Result<UnrollResult> {
    check_window(system, state, k)?;
    check_params(system, theta)?;
    let mut current = state.clone();
    let mut loss_sum = 0.0;
    let mut losses = retain.then(|| Vec::with_capacity(k));
    for _ in 0..k {
        let (next, loss) = system.step(&current, theta);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: next.step_index,
            });
        }
        loss_sum += loss;
        if let Some(losses) = losses.as_mut() {
            losses.push(loss);
        }
        current = next;
    }
    Ok(UnrollResult {
        final_state: current,
        loss_sum,
        per_step_losses: losses,
    })
}

/// Applies `step` K times from `state`, summing losses left to right.
pub fn unroll<S: UnrolledSystem + ?Sized>(
    system: &S,
    state: &SystemState,
    theta: &[f64],
    k: usize,
) -> Result<UnrollResult> {
    unroll_impl(system, state, theta, k, false)
}

/// Like [`unroll`], additionally keeping every per-step loss.
pub fn unroll_retaining<S: UnrolledSystem + ?Sized>(
    system: &S,
    state: &SystemState,
    theta: &[f64],
    k: usize,
) -> Result<UnrollResult> {
    unroll_impl(system, state, theta, k, true)
}

/// Exact gradient of a K-step window's loss sum, treating the entering state
/// as a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGradient {
    pub grad: Vec<f64>,
    pub loss_sum: f64,
    pub final_state: SystemState,
}

/// Reverse accumulation through a K-step window.
pub fn window_gradient<S: UnrolledSystem + ?Sized>(
    system: &S,
    state: &SystemState,
    theta: &[f64],
    k: usize,
) -> Result<WindowGradient> {
    check_window(system, state, k)?;
    check_params(system, theta)?;
    if !system.has_jacobians() {
        return Err(Error::MissingJacobians {
            operation: "reverse accumulation",
        });
    }
    let mut jacobians = Vec::with_capacity(k);
    let mut current = state.clone();
    let mut loss_sum = 0.0;
    for _ in 0..k {
        let jac = system
            .step_jacobians(&current, theta)
            .ok_or(Error::MissingJacobians {
                operation: "reverse accumulation",
            })?;
        let (next, loss) = system.step(&current, theta);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: next.step_index,
            });
        }
        loss_sum += loss;
        jacobians.push(jac);
        current = next;
    }

    let mut grad = DVector::zeros(system.param_dim());
    let mut carry = DVector::zeros(system.state_dim());
    for jac in jacobians.iter().rev() {
        let adjoint = &jac.loss_state + &carry;
        grad += jac.param.tr_mul(&adjoint) + &jac.loss_param;
        carry = jac.state.tr_mul(&adjoint);
    }
    Ok(WindowGradient {
        grad: grad.iter().copied().collect(),
        loss_sum,
        final_state: current,
    })
}

/// Exact `dL/dθ` of the full-horizon loss sum from the initial state.
pub fn full_gradient<S: UnrolledSystem + ?Sized>(system: &S, theta: &[f64]) -> Result<Vec<f64>> {
    if !system.has_jacobians() {
        return Err(Error::MissingJacobians {
            operation: "full_gradient",
        });
    }
    let init = system.init_state();
    window_gradient(system, &init, theta, system.horizon()).map(|w| w.grad)
}

/// Wraps a system so that its per-step loss becomes `L_t - L_{t-1}`, with
/// `L_0 ≡ 0` before the first step. Summed over a full unroll this yields the
/// final loss `L_T`.
///
/// The wrapped state appends two coordinates: the most recent loss and the
/// one before it.
#[derive(Debug, Clone)]
pub struct Telescoped<S> {
    inner: S,
}

pub fn telescope<S: UnrolledSystem>(system: S) -> Telescoped<S> {
    Telescoped { inner: system }
}

impl<S> Telescoped<S> {
    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: UnrolledSystem> Telescoped<S> {
    fn split<'a>(&self, state: &'a SystemState) -> (SystemState, f64) {
        let s = self.inner.state_dim();
        (
            SystemState::new(state.values[..s].to_vec(), state.step_index),
            state.values[s],
        )
    }
}

impl<S: UnrolledSystem> UnrolledSystem for Telescoped<S> {
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn state_dim(&self) -> usize {
        self.inner.state_dim() + 2
    }

    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn init_state(&self) -> SystemState {
        let mut init = self.inner.init_state();
        init.values.extend([0.0, 0.0]);
        init
    }

    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        let (inner_state, previous) = self.split(state);
        let (mut next, loss) = self.inner.step(&inner_state, theta);
        next.values.extend([loss, previous]);
        (next, loss - previous)
    }

    fn has_jacobians(&self) -> bool {
        self.inner.has_jacobians()
    }

    fn step_jacobians(&self, state: &SystemState, theta: &[f64]) -> Option<StepJacobians> {
        let (inner_state, _) = self.split(state);
        let jac = self.inner.step_jacobians(&inner_state, theta)?;
        let s = self.inner.state_dim();
        let p = self.inner.param_dim();

        let mut h = DMatrix::zeros(s + 2, s + 2);
        h.view_mut((0, 0), (s, s)).copy_from(&jac.state);
        // latest' = L_t(f(s, θ))
        let latest_row = jac.state.tr_mul(&jac.loss_state);
        for c in 0..s {
            h[(s, c)] = latest_row[c];
        }
        // previous' = latest
        h[(s + 1, s)] = 1.0;

        let mut f = DMatrix::zeros(s + 2, p);
        f.view_mut((0, 0), (s, p)).copy_from(&jac.param);
        let latest_param = jac.param.tr_mul(&jac.loss_state) + &jac.loss_param;
        for c in 0..p {
            f[(s, c)] = latest_param[c];
        }

        let mut loss_state = DVector::zeros(s + 2);
        loss_state[s] = 1.0;
        loss_state[s + 1] = -1.0;
        Some(StepJacobians {
            state: h,
            param: f,
            loss_state,
            loss_param: DVector::zeros(p),
        })
    }
}

#[cfg(test)]
pub(crate) mod test_systems {
    use super::*;

    /// `s_t = a·s_{t-1} + θ`, `L_t = s_t`.
    #[derive(Debug, Clone)]
    pub struct LinearScalar {
        pub a: f64,
        pub horizon: usize,
    }

    impl UnrolledSystem for LinearScalar {
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn init_state(&self) -> SystemState {
            SystemState::initial(vec![0.0])
        }
        fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
            let s = self.a * state.values[0] + theta[0];
            (SystemState::new(vec![s], state.step_index + 1), s)
        }
        fn has_jacobians(&self) -> bool {
            true
        }
        fn step_jacobians(&self, _: &SystemState, _: &[f64]) -> Option<StepJacobians> {
            Some(StepJacobians {
                state: DMatrix::from_element(1, 1, self.a),
                param: DMatrix::from_element(1, 1, 1.0),
                loss_state: DVector::from_element(1, 1.0),
                loss_param: DVector::zeros(1),
            })
        }
    }

    /// Replays a fixed loss sequence; the state is just a counter.
    #[derive(Debug, Clone)]
    pub struct Scripted {
        pub losses: Vec<f64>,
    }

    impl UnrolledSystem for Scripted {
        fn horizon(&self) -> usize {
            self.losses.len()
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn init_state(&self) -> SystemState {
            SystemState::initial(vec![0.0])
        }
        fn step(&self, state: &SystemState, _: &[f64]) -> (SystemState, f64) {
            let t = state.step_index;
            (
                SystemState::new(vec![t as f64 + 1.0], t + 1),
                self.losses[t],
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_systems::*;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_scalar_full_gradient_matches_geometric_series() {
        let sys = LinearScalar { a: 0.9, horizon: 3 };
        let g = full_gradient(&sys, &[1.0]).unwrap();
        // Σ_t (1 - 0.9^t) / 0.1 for t = 1..3
        assert_relative_eq!(g[0], 5.61, max_relative = 1e-12);

        let h = 1e-5 * 2.0;
        let lp = unroll(&sys, &sys.init_state(), &[1.0 + h], 3).unwrap().loss_sum;
        let lm = unroll(&sys, &sys.init_state(), &[1.0 - h], 3).unwrap().loss_sum;
        assert_relative_eq!(g[0], (lp - lm) / (2.0 * h), max_relative = 1e-6);
    }

    #[test]
    fn horizon_overflow_is_reported() {
        let sys = LinearScalar { a: 0.5, horizon: 4 };
        let state = SystemState::new(vec![0.0], 2);
        let err = unroll(&sys, &state, &[1.0], 3).unwrap_err();
        assert_eq!(
            err,
            Error::HorizonOverflow {
                step_index: 2,
                k: 3,
                horizon: 4
            }
        );
        assert!(err.to_string().contains("horizon 4"));
    }

    #[test]
    fn zero_length_unroll_is_rejected() {
        let sys = LinearScalar { a: 0.5, horizon: 4 };
        assert!(matches!(
            unroll(&sys, &sys.init_state(), &[1.0], 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_loss_carries_step() {
        let sys = Scripted {
            losses: vec![1.0, f64::NAN, 2.0],
        };
        let err = unroll(&sys, &sys.init_state(), &[0.0], 3).unwrap_err();
        assert_eq!(err, Error::NonFiniteLoss { step: 2 });
    }

    #[test]
    fn zero_losses_sum_to_zero_and_advance() {
        let sys = Scripted {
            losses: vec![0.0; 5],
        };
        let r = unroll(&sys, &sys.init_state(), &[0.0], 4).unwrap();
        assert_eq!(r.loss_sum, 0.0);
        assert_eq!(r.final_state.step_index, 4);
        assert!(r.per_step_losses.is_none());
    }

    #[test]
    fn retained_losses_sum_in_order() {
        let sys = Scripted {
            losses: vec![0.1, 0.2, 0.3, 0.4],
        };
        let r = unroll_retaining(&sys, &sys.init_state(), &[0.0], 4).unwrap();
        let losses = r.per_step_losses.unwrap();
        let mut acc = 0.0;
        for l in &losses {
            acc += l;
        }
        assert_eq!(acc, r.loss_sum);
    }

    #[test]
    fn telescoped_losses_sum_to_final_loss() {
        let sys = telescope(Scripted {
            losses: vec![3.0, 5.0, 2.0, 7.0],
        });
        let r = unroll_retaining(&sys, &sys.init_state(), &[0.0], 4).unwrap();
        assert_eq!(r.per_step_losses.unwrap(), vec![3.0, 2.0, -3.0, 5.0]);
        assert_eq!(r.loss_sum, 7.0);
    }

    #[test]
    fn telescoped_constant_loss() {
        let sys = telescope(Scripted {
            losses: vec![2.5; 6],
        });
        let r = unroll_retaining(&sys, &sys.init_state(), &[0.0], 6).unwrap();
        assert_eq!(
            r.per_step_losses.unwrap(),
            vec![2.5, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn telescoped_gradient_is_final_step_gradient() {
        let inner = LinearScalar { a: 0.9, horizon: 3 };
        let sys = telescope(inner.clone());
        let g = full_gradient(&sys, &[1.0]).unwrap();
        // L_T = s_3 = θ(1 + 0.9 + 0.81)
        assert_relative_eq!(g[0], 2.71, max_relative = 1e-12);
    }

    #[test]
    fn missing_jacobians_is_an_error() {
        let sys = Scripted {
            losses: vec![1.0; 3],
        };
        assert!(matches!(
            full_gradient(&sys, &[0.0]),
            Err(Error::MissingJacobians { .. })
        ));
    }
}
