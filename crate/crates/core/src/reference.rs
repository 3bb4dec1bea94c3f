//! Double-double evaluation of the network and the objectives, written
//! directly from the formulas and sharing no code with the tape or the
//! batched kernels. Central differences taken here are free of the f64
//! round-off that otherwise dominates at h = 1e-6, so they can check
//! gradients component by component.

use twofloat::TwoFloat;

use crate::loss::{ProblemSpec, StepData, TapeDual};
use crate::network::{Layout, NetworkParams, DEPTH};
use crate::sampling::SampleSet;

type R = TwoFloat;

fn r(x: f64) -> R {
    R::from(x)
}

fn sum(it: impl Iterator<Item = R>) -> R {
    it.fold(r(0.0), |a, b| a + b)
}

/// û(x) and ∇ₓû(x) in double-double precision.
fn network(layout: Layout, mu: f64, theta: &[R], x: &[f64], tangents: bool) -> (R, Vec<R>) {
    let Layout { input_dim: d, width: m } = layout;
    let w = |l: usize, i: usize, j: usize| theta[layout.weight_offset(l) + i * layout.weight_shape(l).1 + j];
    let b = |l: usize, i: usize| theta[layout.bias_offset(l) + i];
    let mut s: Vec<R> = (0..m).map(|i| sum((0..d).map(|j| w(1, i, j) * x[j])) + b(1, i)).collect();
    let mut t: Vec<Vec<R>> = if tangents {
        (0..d).map(|j| (0..m).map(|i| w(1, i, j)).collect()).collect()
    } else {
        Vec::new()
    };
    for l in 2..DEPTH {
        let z: Vec<R> = (0..m).map(|i| sum((0..m).map(|j| w(l, i, j) * s[j])) + b(l, i)).collect();
        let slope: Vec<f64> = z.iter().map(|&zi| if zi > 0.0 { 1.0 } else { mu }).collect();
        for tj in &mut t {
            *tj = (0..m).map(|i| sum((0..m).map(|j| w(l, i, j) * tj[j])) * slope[i]).collect();
        }
        s = z.iter().zip(&slope).map(|(&zi, &c)| zi * c).collect();
    }
    let out = sum((0..m).map(|j| w(DEPTH, 0, j) * s[j])) + b(DEPTH, 0);
    let grad = t.iter().map(|tj| sum((0..m).map(|j| w(DEPTH, 0, j) * tj[j]))).collect();
    (out, grad)
}

fn dual_ratio(layout: Layout, mu: f64, eta: &[R], arg: &[R], samples: &SampleSet, spec: &ProblemSpec) -> R {
    let mut num = r(0.0);
    let mut energy = r(0.0);
    for (i, a) in arg.iter().enumerate() {
        let (v, g) = network(layout, mu, eta, samples.interior_point(i), true);
        num += *a * v;
        energy += sum(g.iter().map(|&gj| gj * gj));
    }
    let pen = sum((0..samples.n_boundary()).map(|j| {
        let v = network(layout, mu, eta, samples.boundary_point(j), false).0;
        v * v
    }));
    let num = num * samples.interior_weight();
    let den = energy * samples.interior_weight() + pen * (spec.lambda * samples.boundary_weight());
    num * num / (den * (2.0 * spec.kappa))
}

/// A scalar function of one network's parameters.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// ∫_Ω (target − w)².
    Supervised { target: &'a [f64], samples: &'a SampleSet },
    /// Φ̃ₙ(w) with the given dual term.
    Primal {
        step: &'a StepData,
        dual: TapeDual<'a>,
        samples: &'a SampleSet,
        spec: &'a ProblemSpec,
    },
    /// φ̃*(arg; v) as a function of v.
    Dual { arg: &'a [f64], samples: &'a SampleSet, spec: &'a ProblemSpec },
    /// ‖∇ₓû(x; θ)‖².
    InputGradientNorm { x: &'a [f64] },
}

impl Objective<'_> {
    fn eval(&self, layout: Layout, mu: f64, theta: &[R]) -> R {
        match *self {
            Objective::Supervised { target, samples } => {
                let s = sum(target.iter().enumerate().map(|(i, &g)| {
                    let e = network(layout, mu, theta, samples.interior_point(i), false).0 - g;
                    e * e
                }));
                s * samples.interior_weight()
            }
            Objective::Primal { step, dual, samples, spec } => {
                let mut grad = r(0.0);
                let mut inertia = r(0.0);
                let mut w_int = Vec::with_capacity(step.u_prev.len());
                for (i, &up) in step.u_prev.iter().enumerate() {
                    let (w, g) = network(layout, mu, theta, samples.interior_point(i), true);
                    grad += sum(g.iter().map(|&gj| gj * gj));
                    inertia += (w - up) * w;
                    w_int.push(w);
                }
                let bnd = sum((0..samples.n_boundary()).map(|j| {
                    let w = network(layout, mu, theta, samples.boundary_point(j), false).0;
                    w * w
                }));
                let wi = samples.interior_weight();
                let dual_term = match dual {
                    TapeDual::Constant(p) => r(spec.dt) * p,
                    TapeDual::FrozenV(v) => {
                        let arg: Vec<R> = w_int
                            .iter()
                            .zip(&step.u_prev)
                            .zip(&step.source)
                            .map(|((&w, &up), &f)| r(f) - (w - up) / spec.dt)
                            .collect();
                        let eta: Vec<R> = v.as_slice().iter().map(|&x| r(x)).collect();
                        dual_ratio(v.layout(), v.mu(), &eta, &arg, samples, spec) * spec.dt
                    }
                };
                grad * (0.5 * spec.kappa * spec.dt * wi) + dual_term + inertia * wi + bnd * (spec.lambda * samples.boundary_weight())
            }
            Objective::Dual { arg, samples, spec } => {
                let arg: Vec<R> = arg.iter().map(|&a| r(a)).collect();
                dual_ratio(layout, mu, theta, &arg, samples, spec)
            }
            Objective::InputGradientNorm { x } => {
                let (_, g) = network(layout, mu, theta, x, true);
                sum(g.iter().map(|&gj| gj * gj))
            }
        }
    }
}

/// The objective at `params`, rounded to f64.
pub fn value(params: &NetworkParams, objective: Objective<'_>) -> f64 {
    let theta: Vec<R> = params.as_slice().iter().map(|&x| r(x)).collect();
    f64::from(objective.eval(params.layout(), params.mu(), &theta))
}

/// (F(θ + h eⱼ) − F(θ − h eⱼ)) / 2h for every j, with θ ± h formed exactly.
pub fn central_difference(params: &NetworkParams, objective: Objective<'_>, h: f64) -> Vec<f64> {
    let mut theta: Vec<R> = params.as_slice().iter().map(|&x| r(x)).collect();
    (0..theta.len())
        .map(|j| {
            let base = theta[j];
            theta[j] = base + h;
            let plus = objective.eval(params.layout(), params.mu(), &theta);
            theta[j] = base - h;
            let minus = objective.eval(params.layout(), params.mu(), &theta);
            theta[j] = base;
            f64::from((plus - minus) / (2.0 * h))
        })
        .collect()
}
