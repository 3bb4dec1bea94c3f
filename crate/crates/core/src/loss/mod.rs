//! Discrete objectives of one implicit time step: the supervised fit of the
//! initial condition, the penalized dual ratio φ̃*, and the primal
//! functional Φ̃ₙ.
//!
//! Functions here record on a [`Tape`] and serve as the reference route.
//! [`batched`] computes the same values and parameter gradients with the
//! blocked kernels and is what the trainer calls.

pub mod batched;

use std::fmt;
use std::ops::Add;
use std::sync::Arc;

use crate::autodiff::{network_on_tape, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::metrics_oracle::kappa_of;
use crate::network::NetworkParams;
use crate::sampling::SampleSet;

/// Right-hand side f(t, x) of u_t − κΔu = f.
#[derive(Clone, Default)]
pub enum Source {
    #[default]
    Zero,
    Constant(f64),
    Function(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

impl Source {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::Constant(c) => *c,
            Source::Function(f) => f(t, x),
        }
    }
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Zero => f.write_str("Zero"),
            Source::Constant(c) => write!(f, "Constant({c})"),
            Source::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl PartialEq for Source {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Source::Zero, Source::Zero) => true,
            (Source::Constant(a), Source::Constant(b)) => a.to_bits() == b.to_bits(),
            (Source::Function(a), Source::Function(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// The heat problem on (0, π)ᵈ and its uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub d: usize,
    pub a: Vec<u32>,
    pub kappa: f64,
    pub lambda: f64,
    pub source: Source,
    pub dt: f64,
    pub steps: usize,
    pub t_final: f64,
}

impl ProblemSpec {
    /// κ = 1/Σaᵢ², f = 0, T = N·Δt.
    pub fn heat(a: &[u32], lambda: f64, dt: f64, steps: usize) -> Result<Self> {
        let spec = ProblemSpec {
            d: a.len(),
            a: a.to_vec(),
            kappa: kappa_of(a)?,
            lambda,
            source: Source::Zero,
            dt,
            steps,
            t_final: steps as f64 * dt,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.a.len() != self.d {
            return Err(Error::usage(format!("d = {} with {} frequencies", self.d, self.a.len())));
        }
        for (name, v) in [("kappa", self.kappa), ("lambda", self.lambda), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if (self.steps as f64 * self.dt - self.t_final).abs() > 1e-12 {
            return Err(Error::usage(format!(
                "N·dt = {} does not match T = {}",
                self.steps as f64 * self.dt,
                self.t_final
            )));
        }
        Ok(())
    }

    pub fn t_n(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// ε_den = 1e-12 (1 + λ|∂Ω|).
    pub fn denominator_floor(&self, samples: &SampleSet) -> f64 {
        1e-12 * (1.0 + self.lambda * samples.area_boundary())
    }
}

/// Φ̃ₙ split into its four contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub grad_term: T,
    pub dual_term: T,
    pub inertia_term: T,
    pub boundary_term: T,
    pub total: T,
}

impl<T: Copy + Add<Output = T>> LossBreakdown<T> {
    pub fn from_terms(grad_term: T, dual_term: T, inertia_term: T, boundary_term: T) -> Self {
        LossBreakdown {
            grad_term,
            dual_term,
            inertia_term,
            boundary_term,
            total: grad_term + dual_term + inertia_term + boundary_term,
        }
    }
}

impl LossBreakdown<Var<'_>> {
    pub fn values(&self) -> LossBreakdown<f64> {
        LossBreakdown {
            grad_term: self.grad_term.value(),
            dual_term: self.dual_term.value(),
            inertia_term: self.inertia_term.value(),
            boundary_term: self.boundary_term.value(),
            total: self.total.value(),
        }
    }
}

impl LossBreakdown<f64> {
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("grad_term", self.grad_term),
            ("dual_term", self.dual_term),
            ("inertia_term", self.inertia_term),
            ("boundary_term", self.boundary_term),
        ] {
            if !v.is_finite() {
                return Err(Error::numerical(format!("{name} evaluated to {v}")));
            }
        }
        Ok(())
    }
}

/// How the dual term of Φ̃ₙ responds to w in the minimization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualMode {
    /// Δt·φ̃*(f − (w − uⁿ⁻¹)/Δt; v̂) with v̂ held fixed, differentiated in w.
    #[default]
    FrozenV,
    /// Δt·p_h with p_h a number, no gradient.
    ConstantScalar,
}

impl DualMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DualMode::FrozenV => "frozen_v",
            DualMode::ConstantScalar => "constant_scalar",
        }
    }
}

impl std::str::FromStr for DualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen_v" => Ok(DualMode::FrozenV),
            "constant_scalar" => Ok(DualMode::ConstantScalar),
            other => Err(Error::usage(format!(
                "unknown dual mode {other:?}, expected frozen_v or constant_scalar"
            ))),
        }
    }
}

/// Quantities of time step n that stay fixed while w is optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    pub t_n: f64,
    /// uⁿ⁻¹ at the interior samples.
    pub u_prev: Vec<f64>,
    /// f(t_n, xᵢ) at the interior samples.
    pub source: Vec<f64>,
}

impl StepData {
    pub fn new(spec: &ProblemSpec, samples: &SampleSet, t_n: f64, u_prev: Vec<f64>) -> Result<Self> {
        if u_prev.len() != samples.n_interior() {
            return Err(Error::usage(format!(
                "{} previous values for {} interior points",
                u_prev.len(),
                samples.n_interior()
            )));
        }
        let source = (0..samples.n_interior())
            .map(|i| spec.source.eval(t_n, samples.interior_point(i)))
            .collect();
        Ok(StepData { t_n, u_prev, source })
    }
}

/// f(t_n, xᵢ) − (w(xᵢ) − uⁿ⁻¹(xᵢ))/Δt at the interior samples.
pub fn dual_argument_values(w_values: &[f64], step: &StepData, spec: &ProblemSpec) -> Result<Vec<f64>> {
    if spec.dt == 0.0 {
        return Err(Error::usage("dt must be nonzero to form the dual argument"));
    }
    if w_values.len() != step.u_prev.len() {
        return Err(Error::usage(format!(
            "{} values of w for {} interior points",
            w_values.len(),
            step.u_prev.len()
        )));
    }
    Ok(w_values
        .iter()
        .zip(&step.u_prev)
        .zip(&step.source)
        .map(|((w, up), f)| f - (w - up) / spec.dt)
        .collect())
}

/// Value of φ̃* = A²/(2κ·Den) with its numerator and denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEval {
    pub ratio: f64,
    /// A = (arg, v)
    pub numerator: f64,
    /// Den = ‖∇v‖² + λ‖v‖²_∂Ω
    pub denominator: f64,
}

impl DualEval {
    /// From values of v and ∇v at the samples (`v_grads` row-major n_i × d).
    pub fn from_values(
        arg: &[f64],
        v_interior: &[f64],
        v_grads: &[f64],
        v_boundary: &[f64],
        samples: &SampleSet,
        spec: &ProblemSpec,
    ) -> Result<Self> {
        let ni = samples.n_interior();
        if arg.len() != ni || v_interior.len() != ni || v_grads.len() != ni * samples.dim() || v_boundary.len() != samples.n_boundary() {
            return Err(Error::usage("dual ratio inputs do not match the sample set"));
        }
        let wi = samples.interior_weight();
        let numerator = wi * arg.iter().zip(v_interior).map(|(a, v)| a * v).sum::<f64>();
        let energy = wi * v_grads.iter().map(|g| g * g).sum::<f64>();
        let penalty = spec.lambda * samples.boundary_weight() * v_boundary.iter().map(|v| v * v).sum::<f64>();
        let denominator = energy + penalty;
        check_denominator(denominator, spec, samples)?;
        Ok(DualEval {
            ratio: numerator * numerator / (2.0 * spec.kappa * denominator),
            numerator,
            denominator,
        })
    }
}

pub(crate) fn check_denominator(denominator: f64, spec: &ProblemSpec, samples: &SampleSet) -> Result<()> {
    let threshold = spec.denominator_floor(samples);
    if !(denominator > threshold) {
        return Err(Error::DegenerateDual { denominator, threshold });
    }
    Ok(())
}

fn check_target(len: usize, samples: &SampleSet, what: &str) -> Result<()> {
    if len != samples.n_interior() {
        return Err(Error::usage(format!(
            "{len} {what} values for {} interior points",
            samples.n_interior()
        )));
    }
    Ok(())
}

/// ∫_Ω (target − w)² dx.
pub fn supervised_loss<'t>(tape: &'t Tape, w: &ParamVars<'t>, target: &[f64], samples: &SampleSet) -> Result<Var<'t>> {
    check_target(target.len(), samples, "target")?;
    let mut terms = Vec::with_capacity(target.len());
    for (i, g) in target.iter().enumerate() {
        let (wi, _) = network_on_tape(tape, w, samples.interior_point(i), false)?;
        terms.push((wi - *g).square());
    }
    Ok(tape.sum(&terms) * samples.interior_weight())
}

/// φ̃*(arg; v) = (arg, v)² / (2κ (‖∇v‖² + λ‖v‖²_∂Ω)) on the tape.
///
/// Differentiable in `v` when it holds inputs, and in `arg` when its entries
/// depend on inputs.
pub fn dual_ratio<'t>(
    tape: &'t Tape,
    arg: &[Var<'t>],
    v: &ParamVars<'t>,
    samples: &SampleSet,
    spec: &ProblemSpec,
) -> Result<Var<'t>> {
    check_target(arg.len(), samples, "dual argument")?;
    let mut num = Vec::with_capacity(arg.len());
    let mut energy = Vec::with_capacity(arg.len() * samples.dim());
    for (i, a) in arg.iter().enumerate() {
        let (vi, grad) = network_on_tape(tape, v, samples.interior_point(i), true)?;
        num.push(*a * vi);
        energy.extend(grad.into_iter().map(Var::square));
    }
    let mut pen = Vec::with_capacity(samples.n_boundary());
    for j in 0..samples.n_boundary() {
        pen.push(network_on_tape(tape, v, samples.boundary_point(j), false)?.0.square());
    }
    let numerator = tape.sum(&num) * samples.interior_weight();
    let denominator =
        tape.sum(&energy) * samples.interior_weight() + tape.sum(&pen) * (spec.lambda * samples.boundary_weight());
    check_denominator(denominator.value(), spec, samples)?;
    numerator.square().div(denominator * (2.0 * spec.kappa))
}

/// The dual term of Φ̃ₙ as seen by the tape route.
#[derive(Debug, Clone, Copy)]
pub enum TapeDual<'a> {
    Constant(f64),
    FrozenV(&'a NetworkParams),
}

/// Φ̃ₙ(w; p_h) = κΔt/2 ‖∇w‖² + Δt·p_h + (w − uⁿ⁻¹, w) + λ‖w‖²_∂Ω.
pub fn be_loss<'t>(
    tape: &'t Tape,
    w: &ParamVars<'t>,
    step: &StepData,
    dual: TapeDual<'_>,
    samples: &SampleSet,
    spec: &ProblemSpec,
) -> Result<LossBreakdown<Var<'t>>> {
    check_target(step.u_prev.len(), samples, "previous")?;
    let mut w_int = Vec::with_capacity(step.u_prev.len());
    let mut grad_sq = Vec::new();
    let mut inertia = Vec::with_capacity(step.u_prev.len());
    for (i, up) in step.u_prev.iter().enumerate() {
        let (wi, grad) = network_on_tape(tape, w, samples.interior_point(i), true)?;
        grad_sq.extend(grad.into_iter().map(Var::square));
        inertia.push((wi - *up) * wi);
        w_int.push(wi);
    }
    let mut bnd = Vec::with_capacity(samples.n_boundary());
    for j in 0..samples.n_boundary() {
        bnd.push(network_on_tape(tape, w, samples.boundary_point(j), false)?.0.square());
    }
    let wi = samples.interior_weight();
    let grad_term = tape.sum(&grad_sq) * (0.5 * spec.kappa * spec.dt * wi);
    let inertia_term = tape.sum(&inertia) * wi;
    let boundary_term = tape.sum(&bnd) * (spec.lambda * samples.boundary_weight());
    let dual_term = match dual {
        TapeDual::Constant(p) => tape.constant(spec.dt * p),
        TapeDual::FrozenV(v) => {
            let arg: Vec<Var<'t>> = w_int
                .iter()
                .zip(&step.u_prev)
                .zip(&step.source)
                .map(|((w, up), f)| (*w - *up) * (-1.0 / spec.dt) + *f)
                .collect();
            let vc = ParamVars::constants(tape, v);
            dual_ratio(tape, &arg, &vc, samples, spec)? * spec.dt
        }
    };
    let out = LossBreakdown::from_terms(grad_term, dual_term, inertia_term, boundary_term);
    out.values().check_finite()?;
    Ok(out)
}
