//! Structural invariants of unrolls and estimators, checked over random inputs.

use pes_core::estimators::{
    es_step, pes_analytic_step, pes_step, rtrl_step, tbptt_step, EstimatorKind, NoiseSpec,
    OnlineEstimator, ParticleEnsemble, RtrlState,
};
use pes_core::tasks::{
    make_task, Correlation, InfluenceBalancing, InfluenceConfig, QuadraticConfig,
    QuadraticScenario, Structure, TaskConfig, Toy2d, Toy2dConfig,
};
use pes_core::{full_gradient, telescope, unroll, unroll_retaining, StepJacobians, SystemState, UnrolledSystem};
use proptest::prelude::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Multiplies every per-step loss (and loss derivative) of `inner` by `c`.
struct Scaled<S> {
    inner: S,
    c: f64,
}

impl<S: UnrolledSystem> UnrolledSystem for Scaled<S> {
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn init_state(&self) -> SystemState {
        self.inner.init_state()
    }
    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        let (s, l) = self.inner.step(state, theta);
        (s, self.c * l)
    }
    fn has_jacobians(&self) -> bool {
        self.inner.has_jacobians()
    }
    fn step_jacobians(&self, state: &SystemState, theta: &[f64]) -> Option<StepJacobians> {
        self.inner.step_jacobians(state, theta).map(|j| StepJacobians {
            loss_state: j.loss_state * self.c,
            loss_param: j.loss_param * self.c,
            ..j
        })
    }
}

fn toy(horizon: usize) -> Toy2d {
    Toy2d::new(&Toy2dConfig {
        horizon,
        ..Default::default()
    })
    .unwrap()
}

fn influence(horizon: usize) -> InfluenceBalancing {
    InfluenceBalancing::new(&InfluenceConfig {
        horizon,
        ..Default::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unroll_composes(k1 in 1usize..20, k2 in 1usize..20, th0 in -6.0f64..-2.0, th1 in -6.0f64..-2.0) {
        let sys = toy(40);
        let theta = [th0, th1];
        let init = sys.init_state();
        let a = unroll_retaining(&sys, &init, &theta, k1).unwrap();
        let b = unroll_retaining(&sys, &a.final_state, &theta, k2).unwrap();
        let whole = unroll_retaining(&sys, &init, &theta, k1 + k2).unwrap();
        prop_assert_eq!(&b.final_state, &whole.final_state);
        let mut joined = a.per_step_losses.unwrap();
        joined.extend(b.per_step_losses.unwrap());
        prop_assert_eq!(&joined, whole.per_step_losses.as_ref().unwrap());
        let mut sum = 0.0;
        for l in &joined {
            sum += l;
        }
        prop_assert_eq!(sum.to_bits(), whole.loss_sum.to_bits());
    }

    #[test]
    fn unrolls_are_deterministic(theta in -1.0f64..1.0, k in 1usize..50) {
        let sys = influence(50);
        let a = unroll(&sys, &sys.init_state(), &[theta], k).unwrap();
        let b = unroll(&sys, &sys.init_state(), &[theta], k).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn telescoping_recovers_final_loss(theta in -1.0f64..1.0, horizon in 1usize..40) {
        let sys = influence(horizon);
        let direct = unroll_retaining(&sys, &sys.init_state(), &[theta], horizon).unwrap();
        let last = *direct.per_step_losses.unwrap().last().unwrap();
        let tele = telescope(sys);
        let sum = unroll(&tele, &tele.init_state(), &[theta], horizon).unwrap().loss_sum;
        prop_assert!((sum - last).abs() <= 1e-12 * last.abs().max(1e-12), "{} vs {}", sum, last);
    }

    #[test]
    fn antithetic_pairs_are_exact_negations(seed in any::<u64>(), iter in any::<u64>(), dim in 1usize..6) {
        let noise = NoiseSpec::new(0.7, 8, seed).unwrap();
        let eps = noise.particle_perturbations(iter, dim);
        for pair in eps.chunks(2) {
            for (a, b) in pair[0].iter().zip(&pair[1]) {
                prop_assert_eq!(*a, -*b);
            }
        }
    }

    #[test]
    fn accumulators_hold_running_perturbation_sums(seed in any::<u64>(), windows in 1usize..6) {
        let sys = toy(30);
        let noise = NoiseSpec::new(0.5, 6, seed).unwrap();
        let mut ens = ParticleEnsemble::new(&sys, 6);
        let mut expected = vec![vec![0.0; 2]; 6];
        for w in 0..windows {
            pes_step(&sys, &mut ens, &[-4.0, -4.0], 5, &noise, w as u64).unwrap();
            for (acc, eps) in expected.iter_mut().zip(noise.particle_perturbations(w as u64, 2)) {
                for (a, e) in acc.iter_mut().zip(eps) {
                    *a += e;
                }
            }
        }
        prop_assert_eq!(&ens.accumulators, &expected);
        prop_assert_eq!(ens.unroll_count, windows);
    }

    #[test]
    fn es_and_pes_agree_on_a_single_unroll(seed in any::<u64>(), iter in any::<u64>()) {
        let sys = toy(20);
        let theta = [-4.5, -4.0];
        let noise = NoiseSpec::new(1.0, 10, seed).unwrap();
        let (es, _) = es_step(&sys, &sys.init_state(), &theta, 20, &noise, iter).unwrap();
        let mut ens = ParticleEnsemble::new(&sys, 10);
        let pes = pes_step(&sys, &mut ens, &theta, 20, &noise, iter).unwrap();
        prop_assert_eq!(es, pes);
    }

    #[test]
    fn estimates_scale_linearly_with_the_loss(seed in any::<u64>(), power in -3i32..4) {
        let c = 2f64.powi(power);
        let base = influence(12);
        let scaled = Scaled { inner: influence(12), c };
        let noise = NoiseSpec::new(0.1, 4, seed).unwrap();
        let theta = [0.3];

        let (a, _) = es_step(&base, &base.init_state(), &theta, 4, &noise, 0).unwrap();
        let (b, _) = es_step(&scaled, &scaled.init_state(), &theta, 4, &noise, 0).unwrap();
        prop_assert_eq!(b.grad[0], c * a.grad[0]);

        let mut ea = ParticleEnsemble::new(&base, 4);
        let mut eb = ParticleEnsemble::new(&scaled, 4);
        let mut ma = base.init_state();
        let mut mb = scaled.init_state();
        for w in 0..3 {
            let a = pes_analytic_step(&base, &mut ea, &mut ma, &theta, 4, &noise, w).unwrap();
            let b = pes_analytic_step(&scaled, &mut eb, &mut mb, &theta, 4, &noise, w).unwrap();
            prop_assert!(rel_close(b.grad[0], c * a.grad[0], 1e-12));
        }
    }

    #[test]
    fn exact_methods_agree(theta in -1.0f64..1.0, horizon in 2usize..60) {
        let sys = influence(horizon);
        let full = full_gradient(&sys, &[theta]).unwrap()[0];
        let mut mean = sys.init_state();
        let tb = tbptt_step(&sys, &mut mean, &[theta], horizon).unwrap().grad[0];
        let mut s = sys.init_state();
        let mut j = RtrlState::new(&sys);
        let rt = rtrl_step(&sys, &mut s, &mut j, &[theta], horizon).unwrap().grad[0];
        prop_assert!(rel_close(tb, full, 1e-8));
        prop_assert!(rel_close(rt, full, 1e-8));
    }

    #[test]
    fn quadratic_gradients_match_the_closed_form(
        p in 1usize..4,
        t in 1usize..6,
        upper in any::<bool>(),
        iid in any::<bool>(),
        curvature in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let q = QuadraticScenario::new(&QuadraticConfig {
            param_dim: p,
            horizon: t,
            structure: if upper { Structure::UpperTriangular } else { Structure::Diagonal },
            correlation: if iid { Correlation::Iid } else { Correlation::Identical },
            g_norm: 1.5,
            curvature,
            seed,
        })
        .unwrap();
        let theta: Vec<f64> = (0..p).map(|j| 0.3 * j as f64 - 0.2).collect();
        let exact = full_gradient(&q, &theta).unwrap();
        let closed = q.analytic_gradient(&theta);
        for (a, b) in exact.iter().zip(&closed) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn reset_reproduces_a_whole_inner_problem() {
    let sys = toy(100);
    let noise = NoiseSpec::new(1.0, 8, 77).unwrap();
    let mut est = OnlineEstimator::new(EstimatorKind::Pes, &sys, noise).unwrap();
    let run = |est: &mut OnlineEstimator| -> Vec<Vec<f64>> {
        (0..10)
            .map(|w| est.estimate(&sys, &[-4.6, -4.6], 10, w).unwrap().grad)
            .collect()
    };
    let first = run(&mut est);
    est.reset(&sys);
    assert_eq!(run(&mut est), first);
}

#[test]
fn every_task_builds_and_unrolls_deterministically() {
    for name in pes_core::tasks::TASK_NAMES {
        let cfg = TaskConfig::default_for(name).unwrap();
        let a = make_task(&cfg).unwrap();
        let b = make_task(&cfg).unwrap();
        let theta = cfg.default_theta();
        let k = a.horizon().min(25);
        let ra = unroll(&a, &a.init_state(), &theta, k).unwrap();
        let rb = unroll(&b, &b.init_state(), &theta, k).unwrap();
        assert_eq!(ra, rb, "{name}");
    }
}

#[test]
fn first_analytic_window_is_the_window_gradient() {
    let sys = influence(20);
    let noise = NoiseSpec::new(0.1, 6, 5).unwrap();
    let mut ens = ParticleEnsemble::new(&sys, 6);
    let mut mean = sys.init_state();
    let est = pes_analytic_step(&sys, &mut ens, &mut mean, &[0.5], 5, &noise, 0).unwrap();
    let mut m = sys.init_state();
    let tb = tbptt_step(&sys, &mut m, &[0.5], 5).unwrap();
    assert_eq!(est.grad, tb.grad);
}
