//! CSV logs and per-step checkpoints of a run, written as results arrive.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::metrics_oracle::Metrics;
use crate::network::save_params;

use super::{FitReport, InnerMetrics, IterationRecord, SolveObserver, StepRecord, StepState};

pub const TRAINING_LOG: &str = "training_log.csv";
pub const METRICS: &str = "metrics.csv";
pub const TRAINING_METRICS: &str = "training_metrics.csv";
pub const INITIAL_FIT: &str = "initial_fit.txt";

pub const TRAINING_LOG_HEADER: [&str; 10] = [
    "n",
    "k",
    "phi_total",
    "grad_term",
    "dual_term",
    "inertia_term",
    "boundary_term",
    "p_h",
    "alpha",
    "elapsed_s",
];
pub const METRICS_HEADER: [&str; 6] = ["n", "t_n", "phi_n_final", "mse", "eps_abs_linf", "eps_rel_l2"];
pub const TRAINING_METRICS_HEADER: [&str; 5] = ["n", "k", "mse", "eps_abs_linf", "eps_rel_l2"];

pub fn u_checkpoint(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("u_step_{n}.params"))
}

pub fn v_checkpoint(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("v_step_{n}.params"))
}

pub fn w_dual_checkpoint(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("w_dual_step_{n}.params"))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn rel(m: &Metrics) -> String {
    m.eps_rel_l2.map_or_else(|| "NaN".to_string(), num)
}

/// Observer that writes `training_log.csv`, `metrics.csv`, optionally
/// `training_metrics.csv`, and `u_step_<n>.params`, `v_step_<n>.params`,
/// `w_dual_step_<n>.params` into one directory. Every row is flushed.
pub struct RunWriter {
    dir: PathBuf,
    log: csv::Writer<File>,
    metrics: csv::Writer<File>,
    inner: Option<csv::Writer<File>>,
}

impl RunWriter {
    pub fn create(dir: impl AsRef<Path>, inner_metrics: bool) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut log = csv::Writer::from_path(dir.join(TRAINING_LOG))?;
        log.write_record(TRAINING_LOG_HEADER)?;
        log.flush()?;
        let mut metrics = csv::Writer::from_path(dir.join(METRICS))?;
        metrics.write_record(METRICS_HEADER)?;
        metrics.flush()?;
        let inner = if inner_metrics {
            let mut w = csv::Writer::from_path(dir.join(TRAINING_METRICS))?;
            w.write_record(TRAINING_METRICS_HEADER)?;
            w.flush()?;
            Some(w)
        } else {
            None
        };
        Ok(RunWriter { dir, log, metrics, inner })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SolveObserver for RunWriter {
    fn initial_fit(&mut self, fit: &FitReport) -> Result<()> {
        fs::write(
            self.dir.join(INITIAL_FIT),
            format!("epochs = {}\nfinal_loss = {}\n", fit.epochs, fit.final_loss),
        )?;
        Ok(())
    }

    fn iteration(&mut self, r: &IterationRecord) -> Result<()> {
        self.log.write_record([
            r.n.to_string(),
            r.k.to_string(),
            num(r.phi.total),
            num(r.phi.grad_term),
            num(r.phi.dual_term),
            num(r.phi.inertia_term),
            num(r.phi.boundary_term),
            num(r.p_h),
            num(r.alpha),
            format!("{:.3}", r.elapsed_s),
        ])?;
        self.log.flush()?;
        Ok(())
    }

    fn inner_metrics(&mut self, r: &InnerMetrics) -> Result<()> {
        if let Some(w) = &mut self.inner {
            w.write_record([r.n.to_string(), r.k.to_string(), num(r.metrics.mse), num(r.metrics.eps_abs_linf), rel(&r.metrics)])?;
            w.flush()?;
        }
        Ok(())
    }

    fn step_completed(&mut self, r: &StepRecord, state: &StepState<'_>) -> Result<()> {
        save_params(state.u, u_checkpoint(&self.dir, r.n))?;
        save_params(state.v, v_checkpoint(&self.dir, r.n))?;
        save_params(state.w_dual, w_dual_checkpoint(&self.dir, r.n))?;
        self.metrics.write_record([
            r.n.to_string(),
            num(r.t_n),
            r.phi_final.map(num).unwrap_or_default(),
            num(r.metrics.mse),
            num(r.metrics.eps_abs_linf),
            rel(&r.metrics),
        ])?;
        self.metrics.flush()?;
        Ok(())
    }
}
