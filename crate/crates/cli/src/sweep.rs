//! One-dimensional loss landscapes: a single parameter of a saved network
//! varies over a grid while everything else stays as it was at the end of
//! a time step.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gradflow_core::loss::batched::{dual_value, primal_value, DualContext};
use gradflow_core::loss::{dual_argument_values, DualMode, StepData};
use gradflow_core::network::batch::evaluate;
use gradflow_core::network::{load_params, NetworkParams};
use gradflow_core::trainer::output::{u_checkpoint, v_checkpoint, w_dual_checkpoint, TRAINING_LOG};
use gradflow_core::trainer::training_samples;
use rayon::prelude::*;

use crate::config::{Net, RunConfig, SweepRequest};

/// p_h of the last inner iteration of step `n`, 0 when none was logged.
pub fn final_p_h(run_dir: &Path, n: usize) -> Result<f64> {
    let path = run_dir.join(TRAINING_LOG);
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("{} has no column {name}", path.display()));
    let (n_col, p_col) = (col("n")?, col("p_h")?);
    let mut p_h = 0.0;
    for row in reader.records() {
        let row = row?;
        if row[n_col].parse::<usize>()? == n {
            p_h = row[p_col].parse()?;
        }
    }
    Ok(p_h)
}

/// Step index from a checkpoint name such as `u_step_3.params`.
pub fn step_of_checkpoint(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.rsplit('_').next()?.parse().ok()
}

pub fn sweep_file_name(req: &SweepRequest) -> String {
    format!("sweep_{}_{}.csv", req.net.as_str(), req.coord.to_string().replace(',', "_"))
}

/// (parameter value, loss) rows of a sweep around the checkpoints of step
/// `n` in `run_dir`.
///
/// For u the loss is Φ̃ₙ(θ; p_h^{n,K}) with uⁿ⁻¹ and p_h frozen; in
/// `frozen_v` mode the dual term uses v̂ of step n instead of the scalar.
/// For v it is −φ̃*(f − (u^{n,K−1} − uⁿ⁻¹)/Δt; v(η)).
pub fn run_sweep(run_dir: &Path, config: &RunConfig, n: usize, req: &SweepRequest, dual_mode: DualMode) -> Result<Vec<(f64, f64)>> {
    let t = &config.trainer;
    let spec = &t.spec;
    if n == 0 || n > spec.steps {
        bail!("sweep step {n} outside 1..={}", spec.steps);
    }
    config.check_coord(req.net, &req.coord)?;
    let batch = t.batch();
    let samples = training_samples(t)?;
    let u_prev = load_params(u_checkpoint(run_dir, n - 1))?;
    let step = StepData::new(spec, &samples, spec.t_n(n), evaluate(&u_prev, samples.interior(), false, batch).values)?;
    let eval: Box<dyn Fn(&NetworkParams) -> gradflow_core::Result<f64> + Sync> = match req.net {
        Net::Primal => {
            let p_h = final_p_h(run_dir, n)?;
            let ctx = match dual_mode {
                DualMode::ConstantScalar => DualContext::ConstantScalar { p_h },
                DualMode::FrozenV => DualContext::frozen(&load_params(v_checkpoint(run_dir, n))?, p_h, &samples, spec, batch)?,
            };
            let (step, samples) = (&step, &samples);
            Box::new(move |p| Ok(primal_value(p, step, &ctx, samples, spec, batch)?.total))
        }
        Net::Dual => {
            let w = load_params(w_dual_checkpoint(run_dir, n))?;
            let arg = dual_argument_values(&evaluate(&w, samples.interior(), false, batch).values, &step, spec)?;
            let samples = &samples;
            Box::new(move |p| Ok(-dual_value(p, &arg, samples, spec, batch)?.ratio))
        }
    };
    let base = match req.net {
        Net::Primal => load_params(u_checkpoint(run_dir, n))?,
        Net::Dual => load_params(v_checkpoint(run_dir, n))?,
    };
    if base.layout() != config.layout(req.net) {
        bail!("checkpoint shape does not match the run configuration");
    }
    req.grid_values()
        .into_par_iter()
        .map(|x| {
            let mut p = base.clone();
            p.set(&req.coord, x)?;
            Ok((x, eval(&p)?))
        })
        .collect::<gradflow_core::Result<Vec<_>>>()
        .map_err(|e| anyhow!(e))
}

pub fn write_sweep(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["value", "loss"])?;
    for (x, y) in rows {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Run directory of a checkpoint: its parent directory.
pub fn run_dir_of(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}
