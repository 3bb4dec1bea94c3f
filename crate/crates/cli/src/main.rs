use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use gradflow_cli::config::parse_range;
use gradflow_cli::run::{checkpoint_metrics, config_for_checkpoint, run_solve};
use gradflow_cli::sweep::{run_dir_of, run_sweep, step_of_checkpoint, sweep_file_name, write_sweep};
use gradflow_cli::{Net, RunConfig, SweepRequest};
use gradflow_core::loss::DualMode;

#[derive(Parser)]
#[command(name = "gradflow", version, about = "Primal-dual neural solver for the heat equation on (0, pi)^d")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver from a config file.
    Solve {
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Error metrics of a primal checkpoint at time t_n.
    Metrics {
        checkpoint: PathBuf,
        #[arg(allow_hyphen_values = true)]
        t_n: f64,
        /// Run configuration; defaults to config.resolved next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Loss along one parameter of a saved network.
    Sweep {
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["u", "v"])]
        net: String,
        /// Parameter coordinate, 1-based: `W3,46,60`, `b1,60` or `b5`.
        #[arg(long)]
        coord: String,
        #[arg(long, allow_hyphen_values = true, default_value = "-1:1")]
        range: String,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        /// Time step of the checkpoint; taken from the file name if omitted.
        #[arg(long)]
        step: Option<usize>,
        #[arg(long, default_value = "constant_scalar")]
        dual_mode: String,
        /// Directory for the CSV; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { config, out, set } => {
            let mut overrides: Vec<String> = set.iter().map(|kv| kv.replacen('=', " = ", 1)).collect();
            if let Some(out) = out {
                overrides.push(format!("output_dir = {}", out.display()));
            }
            let cfg = RunConfig::load(&config, &overrides)?;
            let outcome = run_solve(&cfg)?;
            let last = outcome.solution.log.steps.last().expect("step 0 is always recorded");
            println!(
                "wrote {} (n = {}, mse = {:e}, eps_rel_l2 = {})",
                outcome.dir.display(),
                last.n,
                last.metrics.mse,
                last.metrics.eps_rel_l2.map_or("undefined".to_string(), |r| format!("{r:e}"))
            );
            Ok(())
        }
        Command::Metrics { checkpoint, t_n, config } => {
            let cfg = config_for_checkpoint(&checkpoint, config.as_deref())?;
            let m = checkpoint_metrics(&checkpoint, t_n, &cfg)?;
            println!("t_n,mse,eps_abs_linf,eps_rel_l2");
            println!("{t_n},{},{},{}", m.mse, m.eps_abs_linf, m.eps_rel_l2.map_or("NaN".to_string(), |r| r.to_string()));
            Ok(())
        }
        Command::Sweep {
            checkpoint,
            net,
            coord,
            range,
            grid,
            step,
            dual_mode,
            out,
        } => {
            let (lo, hi) = parse_range(&range)?;
            let req = SweepRequest {
                net: net.parse::<Net>()?,
                coord: coord.parse().map_err(|e| anyhow::anyhow!("{e}"))?,
                lo,
                hi,
                grid,
            };
            if grid == 0 {
                bail!("--grid must be at least 1");
            }
            let Some(n) = step.or_else(|| step_of_checkpoint(&checkpoint)) else {
                bail!("cannot tell the time step of {}; pass --step", checkpoint.display());
            };
            let dir = run_dir_of(&checkpoint);
            let cfg = config_for_checkpoint(&checkpoint, None)?;
            let rows = run_sweep(&dir, &cfg, n, &req, dual_mode.parse::<DualMode>()?)?;
            let path = out.unwrap_or(dir).join(sweep_file_name(&req));
            write_sweep(&path, &rows)?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
            Ok(())
        }
    }
}
