use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pes_bench::output::emit_results;
use pes_bench::variance::{emit_variance, run_variance};
use pes_bench::{
    load_prepared, resolve_out_dir, run_experiment, run_gradcheck, with_workers, BenchError,
    Result,
};

/// Relative tolerance for `gradcheck`.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "pes-bench", version, about = "Gradient estimators for unrolled computation graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for particle and trial parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: $PES_BENCH_OUT/<config stem>, else runs/<config stem>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize θ with the configured estimator and write run.csv, summary.json, config.resolved.
    Run { config: PathBuf },
    /// Measure estimator variance with θ frozen and write variance.csv, summary.json, config.resolved.
    Variance { config: PathBuf },
    /// Compare a task's exact gradient with central finite differences.
    Gradcheck {
        task: String,
        /// Comma-separated θ; defaults to the task's usual start.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let prepared = load_prepared(&config, cli.seed)?;
            let dir = resolve_out_dir(cli.out.as_deref(), &config);
            let (log, summary) = with_workers(cli.workers, || run_experiment(&prepared))??;
            emit_results(&log, &summary, &prepared.config, &dir)?;
            println!(
                "{} iterations, final meta-loss {:.6e}, θ = {:?} → {}",
                summary.iterations,
                summary.final_meta_loss,
                summary.final_theta,
                dir.display()
            );
        }
        Command::Variance { config } => {
            let prepared = load_prepared(&config, cli.seed)?;
            let dir = resolve_out_dir(cli.out.as_deref(), &config);
            let summary = with_workers(cli.workers, || run_variance(&prepared))??;
            emit_variance(&summary, &prepared, &dir)?;
            println!("{:>6} {:>9} {:>14} {:>12} {:>14}", "K", "unrolls", "tr Var", "SE", "normalized");
            for r in &summary.rows {
                println!(
                    "{:>6} {:>9} {:>14.6e} {:>12.4e} {:>14.6e}",
                    r.k, r.n_unrolls, r.total_variance, r.standard_error, r.normalized
                );
            }
            println!("→ {}", dir.display());
        }
        Command::Gradcheck { task, theta } => {
            let report = with_workers(cli.workers, || run_gradcheck(&task, theta))??;
            if report.skipped_kink {
                println!("{task}: trajectory touches a non-differentiable point, skipped");
                return Ok(());
            }
            println!("{:>5} {:>22} {:>22} {:>12}", "coord", "exact", "finite diff", "rel err");
            for e in &report.entries {
                println!(
                    "{:>5} {:>22.14e} {:>22.14e} {:>12.3e}",
                    e.index, e.analytic, e.finite_difference, e.relative_error
                );
            }
            if !report.passes(GRADCHECK_TOL) {
                return Err(BenchError::Numerical(format!(
                    "{task}: max relative error {:.3e} exceeds {GRADCHECK_TOL:e}",
                    report.max_relative_error()
                )));
            }
            println!("{task}: ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
