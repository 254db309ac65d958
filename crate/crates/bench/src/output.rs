//! Result files: `run.csv`, `summary.json`, `config.resolved`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use crate::run::RunLog;

/// 17 significant digits in scientific notation.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run_csv_header(param_dim: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "inner_t".to_string()];
    h.extend((0..param_dim).map(|i| format!("theta_{i}")));
    h.extend(["grad_norm", "meta_loss", "wall_s"].map(String::from));
    h
}

pub fn run_csv(log: &RunLog) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| BenchError::Io(e.to_string());
    w.write_record(run_csv_header(log.param_dim)).map_err(csv_err)?;
    for row in &log.rows {
        let mut rec = vec![row.iteration.to_string(), row.inner_t.to_string()];
        rec.extend(row.theta.iter().map(|t| fmt_float(*t)));
        rec.push(fmt_float(row.grad_norm));
        rec.push(row.meta_loss.map(fmt_float).unwrap_or_default());
        rec.push(fmt_float(row.wall_s));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| BenchError::Io(e.to_string()))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| BenchError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_resolved(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    write_atomic(&dir.join("config.resolved"), config.to_toml()?.as_bytes())
}

pub fn emit_results<T: Serialize>(
    log: &RunLog,
    summary: &T,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("run.csv"), &run_csv(log)?)?;
    write_json(&dir.join("summary.json"), summary)?;
    write_resolved(dir, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::RunRow;

    #[test]
    fn empty_log_is_header_only() {
        let log = RunLog {
            param_dim: 2,
            rows: Vec::new(),
        };
        let text = String::from_utf8(run_csv(&log).unwrap()).unwrap();
        assert_eq!(text, "iteration,inner_t,theta_0,theta_1,grad_norm,meta_loss,wall_s\n");
    }

    #[test]
    fn rows_use_seventeen_digits_and_blank_meta_loss() {
        let log = RunLog {
            param_dim: 1,
            rows: vec![RunRow {
                iteration: 0,
                inner_t: 10,
                theta: vec![0.1],
                grad_norm: 2.0,
                meta_loss: None,
                wall_s: 0.5,
            }],
        };
        let text = String::from_utf8(run_csv(&log).unwrap()).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(
            line,
            "0,10,1.0000000000000001e-1,2.0000000000000000e0,,5.0000000000000000e-1"
        );
        let parsed: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, 0.1);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest::proptest! {
        #[test]
        fn floats_round_trip_exactly(bits in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = fmt_float(bits);
            proptest::prop_assert_eq!(text.parse::<f64>().unwrap().to_bits(), bits.to_bits());
        }
    }
}
