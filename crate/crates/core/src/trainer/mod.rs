//! The time-stepping solver: a supervised fit of u⁰, then for every step n
//! an alternation of dual ascent over η and primal descent over θ.

pub mod output;

use std::borrow::Cow;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::loss::batched::{self, DualContext, DualSnapshot};
use crate::loss::{dual_argument_values, DualMode, LossBreakdown, ProblemSpec, StepData};
use crate::metrics_oracle::{compute_metrics, exact_solution, Metrics};
use crate::network::batch::{evaluate, BatchConfig};
use crate::network::{init_params, NetworkParams, DEFAULT_MU};
use crate::optimizer::{lr_schedule, AdamState, Phase};
use crate::sampling::SampleSet;

/// When to leave the inner k-loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// Run exactly `k_max` iterations.
    IterationCap,
    /// Stop early once |Φ_k − Φ_{k−window}| ≤ tol·|Φ_{k−window}|, still
    /// capped at `k_max`.
    Plateau { window: usize, tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub spec: ProblemSpec,
    pub m_u: usize,
    pub m_v: usize,
    pub mu: f64,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub epochs_init: usize,
    pub epochs_dual: usize,
    pub epochs_primal: usize,
    pub k_max: usize,
    pub seed: u64,
    pub dual_mode: DualMode,
    pub deterministic: bool,
    pub resample_per_epoch: bool,
    pub persist_adam_state: bool,
    pub termination: Termination,
    /// Record metrics of u^{n,k} every this many k; 0 disables.
    pub metric_cadence: usize,
    /// Evaluate metrics on an independent cloud of the same size.
    pub metrics_on_fresh_cloud: bool,
    /// Samples per block in the batched kernels.
    pub chunk: usize,
}

/// 5·10³ initial-fit epochs up to d = 3, 5·10⁴ above.
pub fn default_epochs_init(d: usize) -> usize {
    if d <= 3 {
        5_000
    } else {
        50_000
    }
}

impl TrainerConfig {
    pub fn new(spec: ProblemSpec, n_interior: usize, n_boundary: usize) -> Self {
        TrainerConfig {
            epochs_init: default_epochs_init(spec.d),
            spec,
            m_u: 60,
            m_v: 30,
            mu: DEFAULT_MU,
            n_interior,
            n_boundary,
            epochs_dual: 500,
            epochs_primal: 50,
            k_max: 200,
            seed: 0,
            dual_mode: DualMode::FrozenV,
            deterministic: true,
            resample_per_epoch: false,
            persist_adam_state: false,
            termination: Termination::IterationCap,
            metric_cadence: 0,
            metrics_on_fresh_cloud: false,
            chunk: BatchConfig::default().chunk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        for (name, v) in [
            ("m_u", self.m_u),
            ("m_v", self.m_v),
            ("n_interior", self.n_interior),
            ("n_boundary", self.n_boundary),
            ("chunk", self.chunk),
        ] {
            if v == 0 {
                return Err(Error::usage(format!("{name} must be at least 1")));
            }
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::usage(format!("mu must be finite and non-negative, got {}", self.mu)));
        }
        if let Termination::Plateau { window, tol } = self.termination {
            if window == 0 || !(tol >= 0.0) {
                return Err(Error::usage("plateau termination needs window >= 1 and tol >= 0"));
            }
        }
        Ok(())
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig {
            chunk: self.chunk,
            deterministic: self.deterministic,
        }
    }
}

/// Independent seeds for the separate random streams of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 of the combined key
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SAMPLES: u64 = 0;
const STREAM_PRIMAL_INIT: u64 = 1;
const STREAM_DUAL_INIT: u64 = 2;
const STREAM_METRIC_SAMPLES: u64 = 3;
const STREAM_RESAMPLE: u64 = 1 << 32;

/// The training cloud of a run.
pub fn training_samples(config: &TrainerConfig) -> Result<SampleSet> {
    SampleSet::generate(config.spec.d, config.n_interior, config.n_boundary, derive_seed(config.seed, STREAM_SAMPLES))
}

/// The cloud metrics are reported on.
pub fn metric_samples(config: &TrainerConfig) -> Result<SampleSet> {
    if config.metrics_on_fresh_cloud {
        SampleSet::generate(config.spec.d, config.n_interior, config.n_boundary, derive_seed(config.seed, STREAM_METRIC_SAMPLES))
    } else {
        training_samples(config)
    }
}

/// The fixed training cloud, or a fresh one per epoch.
#[derive(Debug, Clone)]
pub struct CloudSource<'a> {
    base: &'a SampleSet,
    resample_seed: Option<u64>,
    drawn: u64,
}

impl<'a> CloudSource<'a> {
    pub fn fixed(base: &'a SampleSet) -> Self {
        CloudSource {
            base,
            resample_seed: None,
            drawn: 0,
        }
    }

    /// Draws a new cloud shaped like `base` for every epoch.
    pub fn resampling(base: &'a SampleSet, seed: u64) -> Self {
        CloudSource {
            base,
            resample_seed: Some(seed),
            drawn: 0,
        }
    }

    fn for_config(base: &'a SampleSet, config: &TrainerConfig) -> Self {
        if config.resample_per_epoch {
            Self::resampling(base, derive_seed(config.seed, STREAM_RESAMPLE))
        } else {
            Self::fixed(base)
        }
    }

    pub fn base(&self) -> &'a SampleSet {
        self.base
    }

    pub fn is_fixed(&self) -> bool {
        self.resample_seed.is_none()
    }

    fn epoch(&mut self) -> Result<Cow<'a, SampleSet>> {
        let Some(seed) = self.resample_seed else {
            return Ok(Cow::Borrowed(self.base));
        };
        self.drawn += 1;
        let b = self.base;
        Ok(Cow::Owned(SampleSet::generate(b.dim(), b.n_interior(), b.n_boundary(), derive_seed(seed, self.drawn))?))
    }
}

fn at(n: usize, k: usize, epoch: Option<usize>) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Training { .. } => e,
        other => Error::Training {
            n,
            k,
            epoch,
            source: Box::new(other),
        },
    }
}

fn in_epoch(epoch: usize) -> impl FnOnce(Error) -> Error {
    at(0, 0, Some(epoch))
}

/// Result of the supervised fit of the initial condition.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: NetworkParams,
    /// ‖u₀ − u⁰_h‖² on the training cloud after the last epoch.
    pub final_loss: f64,
    pub epochs: usize,
}

/// Fits a fresh primal network to u₀ with `epochs_init` Adam steps at the
/// initial-fit learning rate.
pub fn fit_initial(config: &TrainerConfig, samples: &SampleSet) -> Result<FitReport> {
    let a = config.spec.a.clone();
    fit_function(config, samples, &move |x| exact_solution(0.0, x, &a))
}

/// [`fit_initial`] with an arbitrary target function.
pub fn fit_function(config: &TrainerConfig, samples: &SampleSet, target: &dyn Fn(&[f64]) -> f64) -> Result<FitReport> {
    let batch = config.batch();
    let values = |s: &SampleSet| -> Vec<f64> { (0..s.n_interior()).map(|i| target(s.interior_point(i))).collect() };
    let mut u = init_params(config.spec.d, config.m_u, config.mu, derive_seed(config.seed, STREAM_PRIMAL_INIT))?;
    let mut adam = AdamState::new(u.layout().num_params());
    let alpha = lr_schedule(Phase::InitialFit, 0);
    let base_target = values(samples);
    let mut clouds = CloudSource::for_config(samples, config);
    for epoch in 0..config.epochs_init {
        let cloud = clouds.epoch()?;
        let target = match &cloud {
            Cow::Borrowed(_) => Cow::Borrowed(&base_target),
            Cow::Owned(s) => Cow::Owned(values(s)),
        };
        let (_, g) = batched::supervised(&u, &target, &cloud, batch).map_err(in_epoch(epoch))?;
        adam.step(&mut u, &g, alpha).map_err(in_epoch(epoch))?;
    }
    let fitted = evaluate(&u, samples.interior(), false, batch).values;
    let final_loss = samples.interior_weight() * fitted.iter().zip(&base_target).map(|(w, g)| (w - g) * (w - g)).sum::<f64>();
    if !final_loss.is_finite() {
        return Err(in_epoch(config.epochs_init)(Error::numerical("supervised loss is not finite")));
    }
    Ok(FitReport {
        params: u,
        final_loss,
        epochs: config.epochs_init,
    })
}

/// What the dual network is maximized against: f − (w − uⁿ⁻¹)/Δt.
pub struct DualTarget<'a> {
    pub w: &'a NetworkParams,
    pub u_prev: &'a NetworkParams,
    pub t_n: f64,
    /// The argument on the base cloud.
    pub arg: Vec<f64>,
}

impl<'a> DualTarget<'a> {
    pub fn new(w: &'a NetworkParams, u_prev: &'a NetworkParams, step: &StepData, samples: &SampleSet, spec: &ProblemSpec, batch: BatchConfig) -> Result<Self> {
        let arg = dual_argument_values(&evaluate(w, samples.interior(), false, batch).values, step, spec)?;
        Ok(DualTarget {
            w,
            u_prev,
            t_n: step.t_n,
            arg,
        })
    }

    fn arg_on(&self, samples: &SampleSet, spec: &ProblemSpec, batch: BatchConfig) -> Result<Vec<f64>> {
        let up = evaluate(self.u_prev, samples.interior(), false, batch).values;
        let step = StepData::new(spec, samples, self.t_n, up)?;
        dual_argument_values(&evaluate(self.w, samples.interior(), false, batch).values, &step, spec)
    }
}

/// Outcome of one dual maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOutcome {
    /// φ̃* at the returned η on the base cloud.
    pub p_h: f64,
    /// φ̃* at the incoming η.
    pub initial: f64,
    /// Epochs after which the ratio went up, and down.
    pub increases: usize,
    pub decreases: usize,
}

fn all_zero(x: &[f64]) -> bool {
    x.iter().all(|&a| a == 0.0)
}

/// Adam ascent on φ̃*(arg; ·) over η for `epochs` steps.
pub fn dual_max_step(
    v: &mut NetworkParams,
    adam: &mut AdamState,
    target: &DualTarget<'_>,
    clouds: &mut CloudSource<'_>,
    spec: &ProblemSpec,
    epochs: usize,
    batch: BatchConfig,
) -> Result<DualOutcome> {
    let base = clouds.base();
    let alpha = lr_schedule(Phase::DualMax, 0);
    let mut values = Vec::with_capacity(epochs + 1);
    // With a zero argument φ̃* and its gradient vanish identically, so from a
    // fresh Adam state nothing but the step counter moves.
    let idle = clouds.is_fixed() && all_zero(&target.arg) && all_zero(adam.first_moment()) && all_zero(adam.second_moment());
    if idle {
        DualSnapshot::new(v, base, batch).eval(&target.arg, base, spec)?;
        let zeros = vec![0.0; v.layout().num_params()];
        for _ in 0..epochs {
            adam.step_slice(v.as_mut_slice(), &zeros, alpha)?;
        }
        return Ok(DualOutcome {
            p_h: 0.0,
            initial: 0.0,
            increases: 0,
            decreases: 0,
        });
    }
    for epoch in 0..epochs {
        let cloud = clouds.epoch()?;
        let fresh;
        let arg = match &cloud {
            Cow::Borrowed(_) => &target.arg,
            Cow::Owned(s) => {
                fresh = target.arg_on(s, spec, batch).map_err(in_epoch(epoch))?;
                &fresh
            }
        };
        let (eval, g) = batched::dual_ratio(v, arg, &cloud, spec, batch).map_err(in_epoch(epoch))?;
        values.push(eval.ratio);
        let ascent: Vec<f64> = g.values.iter().map(|x| -x).collect();
        adam.step_slice(v.as_mut_slice(), &ascent, alpha).map_err(in_epoch(epoch))?;
    }
    let p_h = DualSnapshot::new(v, base, batch).eval(&target.arg, base, spec)?.ratio;
    let initial = values.first().copied().unwrap_or(p_h);
    if clouds.is_fixed() {
        values.push(p_h);
    }
    let increases = values.windows(2).filter(|w| w[1] > w[0]).count();
    let decreases = values.windows(2).filter(|w| w[1] < w[0]).count();
    Ok(DualOutcome {
        p_h,
        initial,
        increases,
        decreases,
    })
}

/// Φ̃ₙ as a function of w: the data of step n and the dual term.
pub struct PrimalTarget<'a> {
    pub step: &'a StepData,
    pub dual: &'a DualContext,
    /// uⁿ⁻¹ and, in frozen mode, v̂; used to rebuild the data on fresh clouds.
    pub u_prev: &'a NetworkParams,
    pub v: Option<&'a NetworkParams>,
}

/// Adam descent on Φ̃ₙ over θ for `epochs` steps at learning rate `alpha`.
pub fn primal_min_step(
    w: &mut NetworkParams,
    adam: &mut AdamState,
    target: &PrimalTarget<'_>,
    clouds: &mut CloudSource<'_>,
    spec: &ProblemSpec,
    alpha: f64,
    epochs: usize,
    batch: BatchConfig,
) -> Result<()> {
    for epoch in 0..epochs {
        let cloud = clouds.epoch()?;
        let (_, g) = match &cloud {
            Cow::Borrowed(s) => batched::primal(w, target.step, target.dual, s, spec, batch),
            Cow::Owned(s) => {
                let up = evaluate(target.u_prev, s.interior(), false, batch).values;
                let step = StepData::new(spec, s, target.step.t_n, up)?;
                let ctx = match target.v {
                    Some(v) => DualContext::frozen(v, target.dual.p_h(), s, spec, batch)?,
                    None => target.dual.clone(),
                };
                batched::primal(w, &step, &ctx, s, spec, batch)
            }
        }
        .map_err(in_epoch(epoch))?;
        adam.step(w, &g, alpha).map_err(in_epoch(epoch))?;
    }
    Ok(())
}

/// One (n, k) iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub k: usize,
    /// Φ̃ₙ(u^{n,k}; p_h^{n,k}) with the dual term Δt·p_h.
    pub phi: LossBreakdown<f64>,
    pub p_h: f64,
    /// Primal learning rate.
    pub alpha: f64,
    pub elapsed_s: f64,
    pub dual: DualOutcome,
}

/// Metrics of an inner iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerMetrics {
    pub n: usize,
    pub k: usize,
    pub metrics: Metrics,
}

/// Summary of a completed time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub t_n: f64,
    /// Φ̃ₙ at the last inner iteration; `None` for n = 0.
    pub phi_final: Option<f64>,
    pub metrics: Metrics,
}

/// Networks at the end of a time step, for checkpointing.
pub struct StepState<'a> {
    pub u: &'a NetworkParams,
    pub v: &'a NetworkParams,
    /// u^{n,K−1}, the iterate the last dual argument was built from.
    pub w_dual: &'a NetworkParams,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub initial_fit_loss: f64,
    pub iterations: Vec<IterationRecord>,
    pub inner_metrics: Vec<InnerMetrics>,
    pub steps: Vec<StepRecord>,
}

/// Receives results as soon as they are available.
pub trait SolveObserver {
    fn initial_fit(&mut self, _fit: &FitReport) -> Result<()> {
        Ok(())
    }

    fn iteration(&mut self, _record: &IterationRecord) -> Result<()> {
        Ok(())
    }

    fn inner_metrics(&mut self, _record: &InnerMetrics) -> Result<()> {
        Ok(())
    }

    fn step_completed(&mut self, _record: &StepRecord, _state: &StepState<'_>) -> Result<()> {
        Ok(())
    }
}

impl SolveObserver for () {}

pub struct Solution {
    /// u⁰ … u^N.
    pub u: Vec<NetworkParams>,
    pub v: NetworkParams,
    pub log: TrainingLog,
}

fn plateau_reached(history: &[f64], window: usize, tol: f64) -> bool {
    if history.len() <= window {
        return false;
    }
    let now = history[history.len() - 1];
    let then = history[history.len() - 1 - window];
    (now - then).abs() <= tol * then.abs()
}

/// Runs the full solver.
pub fn solve(config: &TrainerConfig, observer: &mut dyn SolveObserver) -> Result<Solution> {
    config.validate()?;
    let start = Instant::now();
    let spec = &config.spec;
    let batch = config.batch();
    let samples = training_samples(config)?;
    let metric_cloud = metric_samples(config)?;
    let mut log = TrainingLog::default();

    let fit = fit_initial(config, &samples)?;
    log.initial_fit_loss = fit.final_loss;
    observer.initial_fit(&fit)?;
    let mut v = init_params(spec.d, config.m_v, config.mu, derive_seed(config.seed, STREAM_DUAL_INIT))?;
    let metrics0 = compute_metrics(&fit.params, 0.0, &metric_cloud, &spec.a, batch)?;
    let rec0 = StepRecord {
        n: 0,
        t_n: 0.0,
        phi_final: None,
        metrics: metrics0,
    };
    observer.step_completed(
        &rec0,
        &StepState {
            u: &fit.params,
            v: &v,
            w_dual: &fit.params,
        },
    )?;
    log.steps.push(rec0);
    let mut us = vec![fit.params];

    let mut adam_v = AdamState::new(v.layout().num_params());
    let mut adam_u = AdamState::new(us[0].layout().num_params());
    let mut clouds = CloudSource::for_config(&samples, config);

    for n in 1..=spec.steps {
        let t_n = spec.t_n(n);
        let u_prev = us[n - 1].clone();
        let step = StepData::new(spec, &samples, t_n, evaluate(&u_prev, samples.interior(), false, batch).values).map_err(at(n, 0, None))?;
        let mut w = u_prev.clone();
        let mut w_dual = w.clone();
        let mut history = Vec::new();
        let mut phi_final = None;
        for k in 1..=config.k_max {
            w_dual.clone_from(&w);
            if !config.persist_adam_state {
                adam_v.reset();
                adam_u.reset();
            }
            let target = DualTarget::new(&w_dual, &u_prev, &step, &samples, spec, batch).map_err(at(n, k, None))?;
            let dual = dual_max_step(&mut v, &mut adam_v, &target, &mut clouds, spec, config.epochs_dual, batch).map_err(|e| relabel(e, n, k))?;
            let ctx = match config.dual_mode {
                DualMode::ConstantScalar => DualContext::ConstantScalar { p_h: dual.p_h },
                DualMode::FrozenV => DualContext::frozen(&v, dual.p_h, &samples, spec, batch).map_err(at(n, k, None))?,
            };
            let alpha = lr_schedule(Phase::PrimalMin, k);
            let target = PrimalTarget {
                step: &step,
                dual: &ctx,
                u_prev: &u_prev,
                v: matches!(config.dual_mode, DualMode::FrozenV).then_some(&v),
            };
            primal_min_step(&mut w, &mut adam_u, &target, &mut clouds, spec, alpha, config.epochs_primal, batch).map_err(|e| relabel(e, n, k))?;
            let phi = batched::primal_value(&w, &step, &DualContext::ConstantScalar { p_h: dual.p_h }, &samples, spec, batch)
                .map_err(at(n, k, None))?;
            let record = IterationRecord {
                n,
                k,
                phi,
                p_h: dual.p_h,
                alpha,
                elapsed_s: start.elapsed().as_secs_f64(),
                dual,
            };
            observer.iteration(&record)?;
            log.iterations.push(record);
            phi_final = Some(phi.total);
            history.push(phi.total);
            if config.metric_cadence > 0 && k % config.metric_cadence == 0 {
                let m = InnerMetrics {
                    n,
                    k,
                    metrics: compute_metrics(&w, t_n, &metric_cloud, &spec.a, batch)?,
                };
                observer.inner_metrics(&m)?;
                log.inner_metrics.push(m);
            }
            if let Termination::Plateau { window, tol } = config.termination {
                if plateau_reached(&history, window, tol) {
                    break;
                }
            }
        }
        let rec = StepRecord {
            n,
            t_n,
            phi_final,
            metrics: compute_metrics(&w, t_n, &metric_cloud, &spec.a, batch)?,
        };
        observer.step_completed(
            &rec,
            &StepState {
                u: &w,
                v: &v,
                w_dual: &w_dual,
            },
        )?;
        log.steps.push(rec);
        us.push(w);
    }
    Ok(Solution { u: us, v, log })
}

/// Fills in (n, k) on errors raised inside a phase.
fn relabel(e: Error, n: usize, k: usize) -> Error {
    match e {
        Error::Training { epoch, source, .. } => Error::Training { n, k, epoch, source },
        other => Error::Training {
            n,
            k,
            epoch: None,
            source: Box::new(other),
        },
    }
}
