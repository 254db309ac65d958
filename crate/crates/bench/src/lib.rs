//! Experiment driver for the estimators in `pes-core`: config parsing, the
//! outer optimization loop, variance sweeps and result files.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod variance;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, Prepared};
pub use error::{BenchError, Result};
pub use run::{run_experiment, RunLog, RunRow, Summary};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "PES_BENCH_OUT";

/// `--out` if given, else `$PES_BENCH_OUT/<config stem>`, else `runs/<config stem>`.
pub fn resolve_out_dir(out: Option<&Path>, config_path: &Path) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(stem)
}

/// Runs `f` on a pool of `workers` threads, or the global pool when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(BenchError::Config("--workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| BenchError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Loads a config, applies a seed override and validates it.
pub fn load_prepared(path: &Path, seed: Option<u64>) -> Result<Prepared> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.experiment.seed = s;
    }
    cfg.prepare()
}

/// Finite-difference check of a task's Jacobians at `theta` (task default
/// when `None`).
pub fn run_gradcheck(
    task_name: &str,
    theta: Option<Vec<f64>>,
) -> Result<pes_core::tasks::GradCheckReport> {
    use pes_core::tasks::{gradcheck, make_task, TaskConfig};
    let cfg = TaskConfig::default_for(task_name).map_err(BenchError::setup)?;
    let task = make_task(&cfg).map_err(BenchError::setup)?;
    let theta = theta.unwrap_or_else(|| cfg.default_theta());
    if theta.len() != pes_core::UnrolledSystem::param_dim(&task) {
        return Err(BenchError::Config(format!(
            "--theta: task `{task_name}` takes {} values",
            pes_core::UnrolledSystem::param_dim(&task)
        )));
    }
    gradcheck(&task, &theta).map_err(BenchError::setup)
}
