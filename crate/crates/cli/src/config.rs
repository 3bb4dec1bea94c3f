//! Run configuration: flat `key = value` text, one entry per line, `#`
//! starts a comment. A `preset` supplies a named experiment; other keys
//! override it regardless of their position in the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use gradflow_core::loss::{DualMode, ProblemSpec, Source};
use gradflow_core::network::{Coord, Layout};
use gradflow_core::sampling::RNG_ALGORITHM;
use gradflow_core::trainer::{default_epochs_init, Termination, TrainerConfig};

pub const RESOLVED_FILE: &str = "config.resolved";

/// Which network a landscape sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Primal,
    Dual,
}

impl Net {
    pub fn as_str(self) -> &'static str {
        match self {
            Net::Primal => "u",
            Net::Dual => "v",
        }
    }
}

impl FromStr for Net {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" | "primal" => Ok(Net::Primal),
            "v" | "dual" => Ok(Net::Dual),
            other => bail!("unknown network {other:?}, expected u or v"),
        }
    }
}

/// One-dimensional loss slice over a single parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRequest {
    pub net: Net,
    pub coord: Coord,
    pub lo: f64,
    pub hi: f64,
    pub grid: usize,
}

impl SweepRequest {
    pub fn grid_values(&self) -> Vec<f64> {
        if self.grid == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.grid - 1) as f64;
        (0..self.grid)
            .map(|i| if i + 1 == self.grid { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

/// `lo:hi`
pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| anyhow!("range {s:?} is not lo:hi"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("range lower bound {lo:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("range upper bound {hi:?}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        bail!("range {s:?} must satisfy lo <= hi");
    }
    Ok((lo, hi))
}

impl FromStr for SweepRequest {
    type Err = anyhow::Error;

    /// `<u|v> <coord> <lo>:<hi> <grid>`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let [net, coord, range, grid] = parts[..] else {
            bail!("sweep {s:?} is not '<u|v> <coord> <lo>:<hi> <grid>'");
        };
        let (lo, hi) = parse_range(range)?;
        let grid: usize = grid.parse().with_context(|| format!("grid size {grid:?}"))?;
        if grid == 0 {
            bail!("grid size must be at least 1");
        }
        Ok(SweepRequest {
            net: net.parse()?,
            coord: coord.parse().map_err(|e| anyhow!("{e}"))?,
            lo,
            hi,
            grid,
        })
    }
}

impl std::fmt::Display for SweepRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}:{} {}", self.net.as_str(), self.coord, self.lo, self.hi, self.grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: String,
    pub preset: Option<String>,
    pub output_dir: PathBuf,
    pub trainer: TrainerConfig,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Sweeps run after the solve, around the checkpoints of this step.
    pub sweeps: Vec<SweepRequest>,
    pub sweep_step: usize,
    pub sweep_dual_mode: DualMode,
}

/// Frequency vectors used in the experiments, by dimension.
pub fn default_frequencies(d: usize) -> Option<Vec<u32>> {
    match d {
        2 => Some(vec![2, 2]),
        3 => Some(vec![2, 2, 3]),
        5 => Some(vec![2, 2, 1, 2, 3]),
        7 => Some(vec![2, 2, 1, 3, 2, 2, 3]),
        _ => None,
    }
}

pub const PRESETS: [&str; 7] = ["landscape5d", "table1_5d", "dim2d", "dim3d", "dim5d", "width7d_60", "width7d_100"];

fn preset(name: &str) -> Option<&'static str> {
    Some(match name {
        "landscape5d" => {
            "d = 5\nn_interior = 100000\nn_boundary = 1000\nm_u = 60\nepochs_init = 50000\nsteps = 1\n\
             sweep = u b1,60 -1:1 101\nsweep = u W3,46,60 -1:1 101\nsweep = u W3,7,45 -1:1 101\n\
             sweep = v b2,30 -1:1 101\nsweep = v W3,2,1 -1:1 101\nsweep = v W4,21,3 -1:1 101\nsweep_step = 1"
        }
        "table1_5d" => "d = 5\nn_interior = 100000\nn_boundary = 1000\nm_u = 60\nepochs_init = 50000\nsteps = 10",
        "dim2d" => "d = 2\nn_interior = 10000\nn_boundary = 400\nm_u = 60\nepochs_init = 5000\nsteps = 10",
        "dim3d" => "d = 3\nn_interior = 100000\nn_boundary = 600\nm_u = 60\nepochs_init = 5000\nsteps = 10",
        "dim5d" => "d = 5\nn_interior = 100000\nn_boundary = 1000\nm_u = 60\nepochs_init = 50000\nsteps = 10",
        "width7d_60" => "d = 7\nn_interior = 100000\nn_boundary = 1400\nm_u = 60\nepochs_init = 50000\nsteps = 10",
        "width7d_100" => "d = 7\nn_interior = 100000\nn_boundary = 1400\nm_u = 100\nepochs_init = 50000\nsteps = 10",
        _ => return None,
    })
}

const KEYS: [&str; 34] = [
    "experiment",
    "preset",
    "output_dir",
    "d",
    "a",
    "lambda",
    "dt",
    "steps",
    "t_final",
    "source",
    "m_u",
    "m_v",
    "mu",
    "n_interior",
    "n_boundary",
    "epochs_init",
    "epochs_dual",
    "epochs_primal",
    "k_max",
    "seed",
    "dual_mode",
    "deterministic",
    "resample_per_epoch",
    "persist_adam_state",
    "termination",
    "plateau_window",
    "plateau_tol",
    "metric_cadence",
    "metrics_on_fresh_cloud",
    "chunk",
    "threads",
    "sweep",
    "sweep_step",
    "sweep_dual_mode",
];

/// Key/value pairs in file order; `sweep` may repeat.
fn entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", lineno + 1))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            bail!("unknown key `{k}` (line {})", lineno + 1);
        }
        out.push((k, v));
    }
    Ok(out)
}

struct Values {
    map: BTreeMap<String, String>,
    sweeps: Vec<String>,
    sweeps_set: bool,
}

impl Values {
    fn collect(pairs: Vec<(String, String)>, allow_repeats: bool) -> Result<Self> {
        let mut v = Values {
            map: BTreeMap::new(),
            sweeps: Vec::new(),
            sweeps_set: false,
        };
        for (k, val) in pairs {
            if k == "sweep" {
                v.sweeps_set = true;
                if !val.is_empty() && val != "none" {
                    v.sweeps.push(val);
                }
            } else if v.map.insert(k.clone(), val).is_some() && !allow_repeats {
                bail!("key `{k}` given more than once");
            }
        }
        Ok(v)
    }

    fn merge(&mut self, over: Values) {
        self.map.extend(over.map);
        if over.sweeps_set {
            self.sweeps = over.sweeps;
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.map
            .get(key)
            .map(|s| s.parse::<T>().map_err(|e| anyhow!("key `{key}`: cannot parse {s:?}: {e}")))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("key `{key}`: expected true or false, got {s:?}"),
    }
}

fn parse_frequencies(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| anyhow!("key `a`: {p:?}: {e}")))
        .collect()
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("key `{key}`: must be positive, got {v}");
    }
    Ok(v)
}

fn at_least_one(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        bail!("key `{key}`: must be at least 1");
    }
    Ok(v)
}

impl RunConfig {
    /// Parses config text, applying `overrides` (`key = value` lines) last.
    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user = Values::collect(entries(text)?, false)?;
        let over = Values::collect(entries(&overrides.join("\n"))?, true)?;
        user.merge(over);
        let preset_name: Option<String> = user.get("preset")?;
        let mut values = match &preset_name {
            Some(name) => {
                let text = preset(name).ok_or_else(|| anyhow!("key `preset`: unknown preset {name:?}; known: {}", PRESETS.join(", ")))?;
                Values::collect(entries(text)?, false)?
            }
            None => Values::collect(Vec::new(), false)?,
        };
        values.merge(user);
        Self::resolve(&values, preset_name)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse_with(&text, overrides).with_context(|| format!("in {}", path.display()))
    }

    fn resolve(v: &Values, preset: Option<String>) -> Result<Self> {
        let a = match (v.get::<usize>("d")?, v.map.get("a")) {
            (d, Some(a)) => {
                let a = parse_frequencies(a)?;
                if let Some(d) = d {
                    if d != a.len() {
                        bail!("key `d`: {d} does not match the {} entries of `a`", a.len());
                    }
                }
                a
            }
            (d, None) => {
                let d = d.unwrap_or(2);
                default_frequencies(d).ok_or_else(|| anyhow!("key `a`: required for d = {d}"))?
            }
        };
        let d = a.len();
        let lambda = positive("lambda", v.or("lambda", 100.0)?)?;
        let dt = positive("dt", v.or("dt", 1e-4)?)?;
        let steps: usize = v.or("steps", 10)?;
        let mut spec = ProblemSpec::heat(&a, lambda, dt, steps).map_err(|e| anyhow!("key `a`: {e}"))?;
        if let Some(t) = v.get::<f64>("t_final")? {
            if (t - spec.t_final).abs() > 1e-12 {
                bail!("key `t_final`: {t} differs from steps * dt = {}", spec.t_final);
            }
        }
        let source: f64 = v.or("source", 0.0)?;
        if !source.is_finite() {
            bail!("key `source`: must be finite");
        }
        if source != 0.0 {
            spec.source = Source::Constant(source);
        }

        let mut t = TrainerConfig::new(spec, 0, 0);
        t.m_u = at_least_one("m_u", v.or("m_u", 60)?)?;
        t.m_v = at_least_one("m_v", v.or("m_v", t.m_v)?)?;
        t.mu = v.or("mu", t.mu)?;
        if !(t.mu.is_finite() && t.mu >= 0.0) {
            bail!("key `mu`: must be finite and non-negative");
        }
        t.n_interior = at_least_one("n_interior", v.or("n_interior", 10_000)?)?;
        t.n_boundary = at_least_one("n_boundary", v.or("n_boundary", 400)?)?;
        t.epochs_init = v.or("epochs_init", default_epochs_init(d))?;
        t.epochs_dual = v.or("epochs_dual", t.epochs_dual)?;
        t.epochs_primal = v.or("epochs_primal", t.epochs_primal)?;
        t.k_max = v.or("k_max", t.k_max)?;
        t.seed = v.or("seed", t.seed)?;
        t.dual_mode = v.or("dual_mode", t.dual_mode)?;
        let flag = |key: &str, default: bool| -> Result<bool> { v.map.get(key).map_or(Ok(default), |s| parse_bool(key, s)) };
        t.deterministic = flag("deterministic", true)?;
        t.resample_per_epoch = flag("resample_per_epoch", false)?;
        t.persist_adam_state = flag("persist_adam_state", false)?;
        t.metrics_on_fresh_cloud = flag("metrics_on_fresh_cloud", false)?;
        t.metric_cadence = v.or("metric_cadence", 0)?;
        t.chunk = at_least_one("chunk", v.or("chunk", t.chunk)?)?;
        let window: usize = v.or("plateau_window", 10)?;
        let tol: f64 = v.or("plateau_tol", 1e-3)?;
        t.termination = match v.map.get("termination").map(String::as_str).unwrap_or("iteration_cap") {
            "iteration_cap" => Termination::IterationCap,
            "plateau" => {
                if window == 0 || !(tol >= 0.0) {
                    bail!("key `plateau_window`/`plateau_tol`: need window >= 1 and tol >= 0");
                }
                Termination::Plateau { window, tol }
            }
            other => bail!("key `termination`: expected iteration_cap or plateau, got {other:?}"),
        };
        t.validate().map_err(|e| anyhow!("{e}"))?;

        let experiment: String = v.or("experiment", preset.clone().unwrap_or_else(|| "run".to_string()))?;
        let output_dir = v.map.get("output_dir").map_or_else(|| Path::new("runs").join(&experiment), PathBuf::from);
        let sweeps = v
            .sweeps
            .iter()
            .map(|s| s.parse::<SweepRequest>().map_err(|e| anyhow!("key `sweep`: {e}")))
            .collect::<Result<Vec<_>>>()?;
        let cfg = RunConfig {
            experiment,
            preset,
            output_dir,
            threads: v.or("threads", 0)?,
            sweeps,
            sweep_step: v.or("sweep_step", 1)?,
            sweep_dual_mode: v.or("sweep_dual_mode", DualMode::ConstantScalar)?,
            trainer: t,
        };
        for s in &cfg.sweeps {
            cfg.check_coord(s.net, &s.coord).map_err(|e| anyhow!("key `sweep`: {e}"))?;
        }
        if !cfg.sweeps.is_empty() && (cfg.sweep_step == 0 || cfg.sweep_step > cfg.trainer.spec.steps) {
            bail!("key `sweep_step`: must lie in 1..={}", cfg.trainer.spec.steps);
        }
        Ok(cfg)
    }

    pub fn layout(&self, net: Net) -> Layout {
        let width = match net {
            Net::Primal => self.trainer.m_u,
            Net::Dual => self.trainer.m_v,
        };
        Layout::new(self.trainer.spec.d, width).expect("validated widths")
    }

    pub fn check_coord(&self, net: Net, coord: &Coord) -> Result<()> {
        self.layout(net).flat_index(coord).map(|_| ()).map_err(|e| anyhow!("{e}"))
    }

    /// Every key with its resolved value; parses back to `self`.
    pub fn to_resolved_string(&self) -> String {
        let t = &self.trainer;
        let s = &t.spec;
        let mut out = String::new();
        let _ = writeln!(out, "# resolved configuration");
        let _ = writeln!(out, "# sampling rng: {RNG_ALGORITHM}");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("experiment", self.experiment.clone());
        if let Some(p) = &self.preset {
            kv("preset", p.clone());
        }
        kv("output_dir", self.output_dir.display().to_string());
        kv("d", s.d.to_string());
        kv("a", s.a.iter().map(u32::to_string).collect::<Vec<_>>().join(","));
        kv("lambda", s.lambda.to_string());
        kv("dt", s.dt.to_string());
        kv("steps", s.steps.to_string());
        kv("t_final", s.t_final.to_string());
        kv(
            "source",
            match s.source {
                Source::Constant(c) => c.to_string(),
                _ => "0".to_string(),
            },
        );
        kv("m_u", t.m_u.to_string());
        kv("m_v", t.m_v.to_string());
        kv("mu", t.mu.to_string());
        kv("n_interior", t.n_interior.to_string());
        kv("n_boundary", t.n_boundary.to_string());
        kv("epochs_init", t.epochs_init.to_string());
        kv("epochs_dual", t.epochs_dual.to_string());
        kv("epochs_primal", t.epochs_primal.to_string());
        kv("k_max", t.k_max.to_string());
        kv("seed", t.seed.to_string());
        kv("dual_mode", t.dual_mode.as_str().to_string());
        kv("deterministic", t.deterministic.to_string());
        kv("resample_per_epoch", t.resample_per_epoch.to_string());
        kv("persist_adam_state", t.persist_adam_state.to_string());
        match t.termination {
            Termination::IterationCap => kv("termination", "iteration_cap".to_string()),
            Termination::Plateau { window, tol } => {
                kv("termination", "plateau".to_string());
                kv("plateau_window", window.to_string());
                kv("plateau_tol", tol.to_string());
            }
        }
        kv("metric_cadence", t.metric_cadence.to_string());
        kv("metrics_on_fresh_cloud", t.metrics_on_fresh_cloud.to_string());
        kv("chunk", t.chunk.to_string());
        kv("threads", self.threads.to_string());
        if self.sweeps.is_empty() {
            kv("sweep", "none".to_string());
        }
        for sw in &self.sweeps {
            kv("sweep", sw.to_string());
        }
        kv("sweep_step", self.sweep_step.to_string());
        kv("sweep_dual_mode", self.sweep_dual_mode.as_str().to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_the_experiment_defaults() {
        let c = RunConfig::parse("d = 2").unwrap();
        let t = &c.trainer;
        assert_eq!(t.spec.dt, 1e-4);
        assert_eq!(t.spec.lambda, 100.0);
        assert_eq!(t.m_v, 30);
        assert_eq!(t.epochs_init, 5000);
        assert_eq!(t.spec.a, [2, 2]);
        assert_eq!(RunConfig::parse("").unwrap(), c);
        assert_eq!(RunConfig::parse("d = 5").unwrap().trainer.epochs_init, 50_000);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("dt = 0", "`dt`"),
            ("dt = abc", "`dt`"),
            ("colour = red", "`colour`"),
            ("d = 4", "`a`"),
            ("d = 3\na = 2,2", "`d`"),
            ("sweep = u W9,1,1 -1:1 11", "`sweep`"),
            ("sweep = v W3,31,1 -1:1 11", "`sweep`"),
            ("preset = nope", "`preset`"),
            ("deterministic = maybe", "`deterministic`"),
            ("t_final = 1", "`t_final`"),
        ] {
            let err = format!("{:#}", RunConfig::parse(text).unwrap_err());
            assert!(err.contains(key), "{text:?}: {err}");
        }
        assert!(RunConfig::parse("dt = 1\ndt = 2").is_err());
    }

    #[test]
    fn overrides_win_over_file_and_preset() {
        let c = RunConfig::parse_with("preset = dim3d\nm_u = 80", &["m_u = 100".into(), "k_max = 3".into()]).unwrap();
        assert_eq!((c.trainer.m_u, c.trainer.k_max, c.trainer.n_interior, c.trainer.spec.a.as_slice()), (100, 3, 100_000, &[2, 2, 3][..]));
        assert!(c.to_resolved_string().contains("m_u = 100"));
    }

    #[test]
    fn resolved_config_round_trips() {
        for text in [
            "",
            "preset = landscape5d\nseed = 9",
            "a = 1,2,3,4\ntermination = plateau\nplateau_tol = 0.25\nsource = 1.5\ndual_mode = constant_scalar",
        ] {
            let c = RunConfig::parse(text).unwrap();
            let back = RunConfig::parse(&c.to_resolved_string()).unwrap();
            assert_eq!(back, c, "{}", c.to_resolved_string());
            assert!(c.to_resolved_string().contains(RNG_ALGORITHM));
        }
        for p in PRESETS {
            let c = RunConfig::parse(&format!("preset = {p}")).unwrap();
            assert_eq!(RunConfig::parse(&c.to_resolved_string()).unwrap(), c);
        }
    }

    #[test]
    fn presets_match_the_experiments() {
        let c = RunConfig::parse("preset = width7d_100").unwrap();
        assert_eq!((c.trainer.spec.d, c.trainer.m_u, c.trainer.n_boundary), (7, 100, 1400));
        let c = RunConfig::parse("preset = landscape5d").unwrap();
        assert_eq!(c.sweeps.len(), 6);
        assert_eq!(c.trainer.spec.steps, 1);
    }

    #[test]
    fn sweep_grid() {
        let s: SweepRequest = "u b5 -1:1 101".parse().unwrap();
        let g = s.grid_values();
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[50], g[100]), (-1.0, 0.0, 1.0));
        assert!(g.windows(2).all(|w| (w[1] - w[0] - 0.02).abs() < 1e-12));
    }
}
