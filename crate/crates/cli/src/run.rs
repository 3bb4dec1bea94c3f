use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use gradflow_core::metrics_oracle::{compute_metrics, Metrics};
use gradflow_core::network::load_params;
use gradflow_core::trainer::output::RunWriter;
use gradflow_core::trainer::{metric_samples, solve, Solution};

use crate::config::{RunConfig, RESOLVED_FILE};
use crate::sweep::{run_sweep, sweep_file_name};

/// What a finished `solve` produced.
pub struct SolveOutcome {
    pub dir: PathBuf,
    pub solution: Solution,
    pub sweep_files: Vec<PathBuf>,
}

pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(f)
}

/// Writes `config.resolved`, runs the solver with incremental CSV output
/// and checkpoints, then the configured landscape sweeps.
pub fn run_solve(config: &RunConfig) -> Result<SolveOutcome> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(RESOLVED_FILE), config.to_resolved_string())?;
    with_threads(config.threads, || {
        let mut writer = RunWriter::create(&dir, config.trainer.metric_cadence > 0)?;
        let solution = solve(&config.trainer, &mut writer).map_err(|e| anyhow!(e)).context("solver aborted; partial logs are flushed")?;
        let mut sweep_files = Vec::new();
        for req in &config.sweeps {
            let rows = run_sweep(&dir, config, config.sweep_step, req, config.sweep_dual_mode)?;
            let path = dir.join(sweep_file_name(req));
            crate::sweep::write_sweep(&path, &rows)?;
            sweep_files.push(path);
        }
        Ok(SolveOutcome {
            dir: dir.clone(),
            solution,
            sweep_files,
        })
    })
}

/// The run configuration stored next to a checkpoint.
pub fn config_for_checkpoint(checkpoint: &Path, explicit: Option<&Path>) -> Result<RunConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join(RESOLVED_FILE),
    };
    RunConfig::load(&path, &[]).with_context(|| format!("loading run configuration {}", path.display()))
}

/// Error metrics of a primal checkpoint against u(t_n, ·) on the run's
/// metric cloud.
pub fn checkpoint_metrics(checkpoint: &Path, t_n: f64, config: &RunConfig) -> Result<Metrics> {
    let u = load_params(checkpoint)?;
    let samples = metric_samples(&config.trainer)?;
    Ok(compute_metrics(&u, t_n, &samples, &config.trainer.spec.a, config.trainer.batch())?)
}
