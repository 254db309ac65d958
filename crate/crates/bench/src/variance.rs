//! `variance` subcommand: estimator variance across a sweep of truncation lengths.

use std::path::Path;

use pes_core::tasks::{Correlation, Structure, Task};
use pes_core::variance::{
    analytic_variance, empirical_variance, exact_linear_variance, ground_truth_gradient, Scenario,
};
use pes_core::UnrolledSystem;
use serde::Serialize;

use crate::config::{Prepared, ReferenceGradient, VarianceSection};
use crate::error::{BenchError, Result};
use crate::output::{fmt_float, write_atomic, write_json, write_resolved};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub k: usize,
    pub n_unrolls: usize,
    pub n_trials: usize,
    pub total_variance: f64,
    pub standard_error: f64,
    pub normalized: f64,
    /// Exact value for quadratic tasks.
    pub exact_variance: Option<f64>,
    /// Published closed form, divided by the number of antithetic pairs.
    pub analytic_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceSummary {
    pub estimator: String,
    pub task: String,
    pub seed: u64,
    pub reference_gradient: Vec<f64>,
    pub reference_source: &'static str,
    pub analytic_leading_order: bool,
    pub rows: Vec<VarianceRow>,
}

fn scenario_of(task: &Task) -> Option<Scenario> {
    match task {
        Task::Quadratic(q) => Some(match (q.config().structure, q.config().correlation) {
            (Structure::Diagonal, Correlation::Identical) => Scenario::DiagIdentical,
            (Structure::Diagonal, Correlation::Iid) => Scenario::DiagIid,
            (Structure::UpperTriangular, Correlation::Identical) => Scenario::UppertriIdentical,
            (Structure::UpperTriangular, Correlation::Iid) => Scenario::UppertriIid,
        }),
        _ => None,
    }
}

pub fn run_variance(prepared: &Prepared) -> Result<VarianceSummary> {
    let cfg = &prepared.config;
    let section = cfg.variance.clone().unwrap_or_default();
    let VarianceSection {
        trials,
        k_values,
        reference,
        ground_truth_particles,
    } = section;
    let task = &prepared.task;
    let theta = &prepared.theta0;
    let kind = cfg.estimator.kind;

    let (reference_gradient, reference_source) = match (reference, task.analytic_gradient(theta)) {
        (ReferenceGradient::Auto, Some(g)) => (g, "analytic"),
        _ => {
            let gt = ground_truth_gradient(
                task,
                theta,
                cfg.estimator.sigma,
                ground_truth_particles,
                pes_core::rng::mix(cfg.experiment.seed, u64::MAX, 0),
            )
            .map_err(BenchError::runtime)?;
            (gt.es, "es")
        }
    };

    let scenario = scenario_of(task).filter(|_| kind.uses_particles());
    let g_sq: f64 = reference_gradient.iter().map(|g| g * g).sum();
    let pairs = (cfg.estimator.n_particles / 2).max(1) as f64;
    let ks = k_values.unwrap_or_else(|| vec![cfg.estimator.k]);
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let report = empirical_variance(task, kind, k, prepared.noise, theta, trials, &reference_gradient)
            .map_err(BenchError::runtime)?;
        let n_unrolls = task.horizon() / k;
        let exact_variance = match task {
            Task::Quadratic(q) if kind.uses_particles() && kind != pes_core::EstimatorKind::PesAnalytic => {
                Some(exact_linear_variance(q, theta, k, cfg.estimator.n_particles).map_err(BenchError::runtime)?)
            }
            _ => None,
        };
        let analytic = scenario.map(|s| {
            analytic_variance(s, task.param_dim(), n_unrolls, g_sq).value / pairs
        });
        rows.push(VarianceRow {
            k,
            n_unrolls,
            n_trials: report.n_trials,
            total_variance: report.total_variance,
            standard_error: report.standard_error,
            normalized: report.normalized,
            exact_variance,
            analytic_variance: analytic,
        });
    }
    Ok(VarianceSummary {
        estimator: kind.to_string(),
        task: cfg.task.name().to_string(),
        seed: cfg.experiment.seed,
        reference_gradient,
        reference_source,
        analytic_leading_order: scenario == Some(Scenario::UppertriIid),
        rows,
    })
}

pub fn variance_csv(summary: &VarianceSummary) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| BenchError::Io(e.to_string());
    w.write_record([
        "k",
        "n_unrolls",
        "n_trials",
        "total_variance",
        "standard_error",
        "normalized",
        "exact_variance",
        "analytic_variance",
    ])
    .map_err(csv_err)?;
    for r in &summary.rows {
        w.write_record([
            r.k.to_string(),
            r.n_unrolls.to_string(),
            r.n_trials.to_string(),
            fmt_float(r.total_variance),
            fmt_float(r.standard_error),
            fmt_float(r.normalized),
            r.exact_variance.map(fmt_float).unwrap_or_default(),
            r.analytic_variance.map(fmt_float).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| BenchError::Io(e.to_string()))
}

pub fn emit_variance(summary: &VarianceSummary, prepared: &Prepared, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("variance.csv"), &variance_csv(summary)?)?;
    write_json(&dir.join("summary.json"), summary)?;
    write_resolved(dir, &prepared.config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn sweep_on_a_quadratic() {
        let text = r#"
[experiment]
seed = 5

[task]
name = "quadratic"
param_dim = 2
horizon = 4

[estimator]
kind = "pes"
k = 1
n_particles = 2
sigma = 0.5

[variance]
trials = 4000
k_values = [1, 2, 4]
"#;
        let p = ExperimentConfig::from_toml(text).unwrap().prepare().unwrap();
        let s = run_variance(&p).unwrap();
        assert_eq!(s.reference_source, "analytic");
        assert_eq!(s.rows.len(), 3);
        for r in &s.rows {
            let exact = r.exact_variance.unwrap();
            assert!((r.total_variance - exact).abs() < 5.0 * r.standard_error, "{r:?}");
            assert!(r.analytic_variance.is_some());
        }
        let csv = String::from_utf8(variance_csv(&s).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
}
