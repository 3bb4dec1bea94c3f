//! Values and parameter gradients of the objectives on whole sample sets,
//! built on [`fused_pass`](crate::network::batch::fused_pass).
//!
//! Each loss is a function of a few quadrature sums. Seeds that depend on a
//! global sum (the dual numerator and denominator) are pushed through as
//! separate seed sets and scaled once the sums are known.

use crate::error::{Error, Result};
use crate::network::batch::{evaluate, fused_pass, BatchConfig, Seeds};
use crate::network::{NetworkParams, ParamGrad};
use crate::sampling::SampleSet;

use super::{check_denominator, dual_argument_values, DualEval, LossBreakdown, ProblemSpec, StepData};

fn combine(parts: &[(f64, &ParamGrad)]) -> ParamGrad {
    let layout = parts[0].1.layout;
    let mut values = vec![0.0; layout.num_params()];
    for (c, g) in parts {
        for (acc, x) in values.iter_mut().zip(&g.values) {
            *acc += c * x;
        }
    }
    ParamGrad { layout, values }
}

fn check_len(len: usize, want: usize, what: &str) -> Result<()> {
    if len != want {
        return Err(Error::usage(format!("{len} {what} values for {want} interior points")));
    }
    Ok(())
}

fn check_gradient(g: &ParamGrad, what: &str) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::numerical(format!("gradient of the {what} is not finite")));
    }
    Ok(())
}

/// ∫_Ω (target − w)² dx and its gradient in θ.
pub fn supervised(w: &NetworkParams, target: &[f64], samples: &SampleSet, batch: BatchConfig) -> Result<(f64, ParamGrad)> {
    check_len(target.len(), samples.n_interior(), "target")?;
    let wi = samples.interior_weight();
    let pass = fused_pass(w, samples.interior(), false, batch, 1, |start, vals, _| {
        let values = vals
            .iter()
            .zip(&target[start..])
            .map(|(v, g)| 2.0 * wi * (v - g))
            .collect();
        vec![Seeds { values, grads: Vec::new() }]
    });
    let loss = wi * pass.outputs.values.iter().zip(target).map(|(v, g)| (v - g) * (v - g)).sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::numerical(format!("supervised loss evaluated to {loss}")));
    }
    let grad = pass.grads.into_iter().next().expect("one seed set");
    check_gradient(&grad, "supervised loss")?;
    Ok((loss, grad))
}

/// v and ∇v at the interior samples and v on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSnapshot {
    pub interior: Vec<f64>,
    pub grads: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl DualSnapshot {
    pub fn new(v: &NetworkParams, samples: &SampleSet, batch: BatchConfig) -> Self {
        let int = evaluate(v, samples.interior(), true, batch);
        DualSnapshot {
            interior: int.values,
            grads: int.grads,
            boundary: evaluate(v, samples.boundary(), false, batch).values,
        }
    }

    pub fn eval(&self, arg: &[f64], samples: &SampleSet, spec: &ProblemSpec) -> Result<DualEval> {
        DualEval::from_values(arg, &self.interior, &self.grads, &self.boundary, samples, spec)
    }
}

/// φ̃*(arg; v) without gradients.
pub fn dual_value(v: &NetworkParams, arg: &[f64], samples: &SampleSet, spec: &ProblemSpec, batch: BatchConfig) -> Result<DualEval> {
    DualSnapshot::new(v, samples, batch).eval(arg, samples, spec)
}

/// φ̃*(arg; v) and its gradient in η (the ascent direction).
pub fn dual_ratio(
    v: &NetworkParams,
    arg: &[f64],
    samples: &SampleSet,
    spec: &ProblemSpec,
    batch: BatchConfig,
) -> Result<(DualEval, ParamGrad)> {
    check_len(arg.len(), samples.n_interior(), "dual argument")?;
    let wi = samples.interior_weight();
    let bw = spec.lambda * samples.boundary_weight();
    let int = fused_pass(v, samples.interior(), true, batch, 2, |start, vals, grads| {
        vec![
            Seeds {
                values: arg[start..start + vals.len()].iter().map(|a| wi * a).collect(),
                grads: Vec::new(),
            },
            Seeds {
                values: vec![0.0; vals.len()],
                grads: grads.iter().map(|g| 2.0 * wi * g).collect(),
            },
        ]
    });
    let bnd = fused_pass(v, samples.boundary(), false, batch, 1, |_, vals, _| {
        vec![Seeds {
            values: vals.iter().map(|x| 2.0 * bw * x).collect(),
            grads: Vec::new(),
        }]
    });
    let eval = DualEval::from_values(arg, &int.outputs.values, &int.outputs.grads, &bnd.outputs.values, samples, spec)?;
    let (a, den, kappa) = (eval.numerator, eval.denominator, spec.kappa);
    let c_num = a / (kappa * den);
    let c_den = -a * a / (2.0 * kappa * den * den);
    let grad = combine(&[(c_num, &int.grads[0]), (c_den, &int.grads[1]), (c_den, &bnd.grads[0])]);
    check_gradient(&grad, "dual ratio")?;
    Ok((eval, grad))
}

/// The dual term of Φ̃ₙ during a minimization phase.
#[derive(Debug, Clone, PartialEq)]
pub enum DualContext {
    /// Δt·p_h, constant in w.
    ConstantScalar { p_h: f64 },
    /// Δt·φ̃*(f − (w − uⁿ⁻¹)/Δt; v̂) with v̂ frozen: its values at the interior
    /// samples and its penalized energy.
    FrozenV { v_interior: Vec<f64>, denominator: f64, p_h: f64 },
}

impl DualContext {
    pub fn frozen(v: &NetworkParams, p_h: f64, samples: &SampleSet, spec: &ProblemSpec, batch: BatchConfig) -> Result<Self> {
        let snap = DualSnapshot::new(v, samples, batch);
        let zero = vec![0.0; samples.n_interior()];
        let eval = snap.eval(&zero, samples, spec)?;
        Ok(DualContext::FrozenV {
            v_interior: snap.interior,
            denominator: eval.denominator,
            p_h,
        })
    }

    /// The maximized dual value recorded with this context.
    pub fn p_h(&self) -> f64 {
        match self {
            DualContext::ConstantScalar { p_h } | DualContext::FrozenV { p_h, .. } => *p_h,
        }
    }
}

struct PrimalSums {
    terms: LossBreakdown<f64>,
    /// A(w) and Den in frozen mode.
    frozen: Option<(f64, f64)>,
}

fn primal_sums(
    w_int: &[f64],
    w_grads: &[f64],
    w_bnd: &[f64],
    step: &StepData,
    dual: &DualContext,
    samples: &SampleSet,
    spec: &ProblemSpec,
) -> Result<PrimalSums> {
    let wi = samples.interior_weight();
    let grad_term = 0.5 * spec.kappa * spec.dt * wi * w_grads.iter().map(|g| g * g).sum::<f64>();
    let inertia_term = wi * w_int.iter().zip(&step.u_prev).map(|(w, up)| (w - up) * w).sum::<f64>();
    let boundary_term = spec.lambda * samples.boundary_weight() * w_bnd.iter().map(|w| w * w).sum::<f64>();
    let (dual_term, frozen) = match dual {
        DualContext::ConstantScalar { p_h } => (spec.dt * p_h, None),
        DualContext::FrozenV { v_interior, denominator, .. } => {
            check_len(v_interior.len(), samples.n_interior(), "frozen dual")?;
            check_denominator(*denominator, spec, samples)?;
            let arg = dual_argument_values(w_int, step, spec)?;
            let a = wi * arg.iter().zip(v_interior).map(|(x, v)| x * v).sum::<f64>();
            (spec.dt * a * a / (2.0 * spec.kappa * denominator), Some((a, *denominator)))
        }
    };
    let terms = LossBreakdown::from_terms(grad_term, dual_term, inertia_term, boundary_term);
    terms.check_finite()?;
    Ok(PrimalSums { terms, frozen })
}

/// Φ̃ₙ(w) without gradients.
pub fn primal_value(
    w: &NetworkParams,
    step: &StepData,
    dual: &DualContext,
    samples: &SampleSet,
    spec: &ProblemSpec,
    batch: BatchConfig,
) -> Result<LossBreakdown<f64>> {
    check_len(step.u_prev.len(), samples.n_interior(), "previous")?;
    let int = evaluate(w, samples.interior(), true, batch);
    let bnd = evaluate(w, samples.boundary(), false, batch);
    Ok(primal_sums(&int.values, &int.grads, &bnd.values, step, dual, samples, spec)?.terms)
}

/// Φ̃ₙ(w) and its gradient in θ.
pub fn primal(
    w: &NetworkParams,
    step: &StepData,
    dual: &DualContext,
    samples: &SampleSet,
    spec: &ProblemSpec,
    batch: BatchConfig,
) -> Result<(LossBreakdown<f64>, ParamGrad)> {
    check_len(step.u_prev.len(), samples.n_interior(), "previous")?;
    let wi = samples.interior_weight();
    let cg = spec.kappa * spec.dt * wi;
    let frozen_v = match dual {
        DualContext::FrozenV { v_interior, .. } => Some(v_interior.as_slice()),
        DualContext::ConstantScalar { .. } => None,
    };
    let k = if frozen_v.is_some() { 2 } else { 1 };
    let int = fused_pass(w, samples.interior(), true, batch, k, |start, vals, grads| {
        let up = &step.u_prev[start..start + vals.len()];
        let mut sets = vec![Seeds {
            values: vals.iter().zip(up).map(|(w, u)| wi * (2.0 * w - u)).collect(),
            grads: grads.iter().map(|g| cg * g).collect(),
        }];
        if let Some(v) = frozen_v {
            sets.push(Seeds {
                values: v[start..start + vals.len()].iter().map(|x| wi * x).collect(),
                grads: Vec::new(),
            });
        }
        sets
    });
    let bw = 2.0 * spec.lambda * samples.boundary_weight();
    let bnd = fused_pass(w, samples.boundary(), false, batch, 1, |_, vals, _| {
        vec![Seeds {
            values: vals.iter().map(|x| bw * x).collect(),
            grads: Vec::new(),
        }]
    });
    let sums = primal_sums(&int.outputs.values, &int.outputs.grads, &bnd.outputs.values, step, dual, samples, spec)?;
    let grad = match sums.frozen {
        Some((a, den)) => combine(&[(1.0, &int.grads[0]), (-a / (spec.kappa * den), &int.grads[1]), (1.0, &bnd.grads[0])]),
        None => combine(&[(1.0, &int.grads[0]), (1.0, &bnd.grads[0])]),
    };
    check_gradient(&grad, "primal functional")?;
    Ok((sums.terms, grad))
}
