//! Scalar reverse-mode tape.
//!
//! Every operation appends one node holding its value, up to two parent
//! indices and the local partial derivatives. Parents always precede their
//! children, so a single reverse sweep accumulates adjoints. Network input
//! gradients are recorded by pushing d forward-mode tangents through the
//! layers onto the same tape, which makes d/dθ ‖∇ₓû‖² an ordinary reverse
//! pass.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::network::{leaky_relu, leaky_relu_slope, Layout, NetworkParams, ParamGrad, DEPTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Square,
    Sqrt,
    /// σ with leak μ.
    LeakyRelu(f64),
    /// x · c for a constant c.
    Scale(f64),
    /// x + c for a constant c.
    Offset(f64),
}

impl OpKind {
    pub fn arity(self) -> usize {
        match self {
            OpKind::Input | OpKind::Const => 0,
            OpKind::Neg
            | OpKind::Square
            | OpKind::Sqrt
            | OpKind::LeakyRelu(_)
            | OpKind::Scale(_)
            | OpKind::Offset(_) => 1,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Const => "const",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Scale(_) => "scale",
            OpKind::Offset(_) => "offset",
        }
    }

    /// Recomputes the node value from its parents. `None` for leaves.
    fn apply(self, a: f64, b: f64) -> Option<f64> {
        Some(match self {
            OpKind::Input | OpKind::Const => return None,
            OpKind::Add => a + b,
            OpKind::Sub => a - b,
            OpKind::Mul => a * b,
            OpKind::Div => a / b,
            OpKind::Neg => -a,
            OpKind::Square => a * a,
            OpKind::Sqrt => a.sqrt(),
            OpKind::LeakyRelu(mu) => leaky_relu(a, mu),
            OpKind::Scale(c) => a * c,
            OpKind::Offset(c) => a + c,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: OpKind,
    parents: [usize; 2],
    partials: [f64; 2],
    value: f64,
}

/// Append-only record of scalar operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// A scalar recorded on a particular [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: OpKind, parents: [usize; 2], partials: [f64; 2], value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            parents,
            partials,
            value,
        });
        Var {
            tape: self,
            index: nodes.len() - 1,
            value,
        }
    }

    /// An independent variable.
    pub fn input(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Input, [0; 2], [0.0; 2], value)
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Const, [0; 2], [0.0; 2], value)
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    /// Appends a node with caller-supplied value and local partials.
    ///
    /// Fails with [`Error::Usage`] on foreign inputs or an arity mismatch, and
    /// with [`Error::Domain`] for division by zero or the square root of a
    /// negative number.
    pub fn record<'t>(&'t self, op: OpKind, inputs: &[Var<'t>], value: f64, partials: &[f64]) -> Result<Var<'t>> {
        if inputs.iter().any(|v| !self.owns(v)) {
            return Err(Error::usage(format!("{} input belongs to another tape", op.name())));
        }
        if inputs.len() != op.arity() || partials.len() != inputs.len() {
            return Err(Error::usage(format!(
                "{} takes {} inputs, got {} inputs and {} partials",
                op.name(),
                op.arity(),
                inputs.len(),
                partials.len()
            )));
        }
        let domain_ok = match op {
            OpKind::Div => inputs[1].value != 0.0,
            OpKind::Sqrt => inputs[0].value >= 0.0,
            _ => true,
        };
        if !domain_ok {
            return Err(Error::Domain {
                node: self.len(),
                op: op.name(),
            });
        }
        let mut parents = [0; 2];
        let mut parts = [0.0; 2];
        for (i, (v, p)) in inputs.iter().zip(partials).enumerate() {
            parents[i] = v.index;
            parts[i] = *p;
        }
        Ok(self.push(op, parents, parts, value))
    }

    /// Adjoint of every node with respect to `output`; nodes that do not
    /// feed `output` get 0.
    pub fn backward(&self, output: Var<'_>) -> Result<Vec<f64>> {
        if !self.owns(&output) {
            return Err(Error::usage("backward output belongs to another tape"));
        }
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..node.op.arity() {
                adj[node.parents[k]] += a * node.partials[k];
            }
        }
        Ok(adj)
    }

    /// Recomputes every node value forward from the leaves.
    pub fn replay(&self) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut values: Vec<f64> = Vec::with_capacity(nodes.len());
        for n in nodes.iter() {
            let a = values.get(n.parents[0]).copied().unwrap_or(0.0);
            let b = values.get(n.parents[1]).copied().unwrap_or(0.0);
            let v = n.op.apply(a, b).unwrap_or(n.value);
            values.push(v);
        }
        values
    }

    /// Stored node values in tape order.
    pub fn values(&self) -> Vec<f64> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }

    /// Parent indices of node `i`.
    pub fn parents(&self, i: usize) -> Vec<usize> {
        let nodes = self.nodes.borrow();
        let n = &nodes[i];
        n.parents[..n.op.arity()].to_vec()
    }

    /// Σ terms, left to right. Empty input records the constant 0.
    pub fn sum<'t>(&'t self, terms: &[Var<'t>]) -> Var<'t> {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((first, rest)) => rest.iter().fold(*first, |acc, &t| acc + t),
        }
    }
}

fn same_tape(a: &Var<'_>, b: &Var<'_>) {
    assert!(
        std::ptr::eq(a.tape, b.tape),
        "operands recorded on different tapes"
    );
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn square(self) -> Var<'t> {
        self.tape
            .push(OpKind::Square, [self.index, 0], [2.0 * self.value, 0.0], self.value * self.value)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let r = self.value.sqrt();
        self.tape.record(OpKind::Sqrt, &[self], r, &[0.5 / r])
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let q = self.value / rhs.value;
        self.tape
            .record(OpKind::Div, &[self, rhs], q, &[1.0 / rhs.value, -q / rhs.value])
    }

    pub fn leaky_relu(self, mu: f64) -> Var<'t> {
        self.tape.push(
            OpKind::LeakyRelu(mu),
            [self.index, 0],
            [leaky_relu_slope(self.value, mu), 0.0],
            leaky_relu(self.value, mu),
        )
    }
}

/// Panics if the operands come from different tapes; use [`Tape::record`]
/// for the fallible form.
impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(&self, &rhs);
        self.tape
            .push(OpKind::Add, [self.index, rhs.index], [1.0, 1.0], self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(&self, &rhs);
        self.tape
            .push(OpKind::Sub, [self.index, rhs.index], [1.0, -1.0], self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(&self, &rhs);
        self.tape.push(
            OpKind::Mul,
            [self.index, rhs.index],
            [rhs.value, self.value],
            self.value * rhs.value,
        )
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.tape
            .push(OpKind::Scale(c), [self.index, 0], [c, 0.0], self.value * c)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.tape
            .push(OpKind::Offset(c), [self.index, 0], [1.0, 0.0], self.value + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self + (-c)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(OpKind::Neg, [self.index, 0], [-1.0, 0.0], -self.value)
    }
}

/// A network's parameters recorded on a tape, either as differentiable
/// inputs or as constants.
pub struct ParamVars<'t> {
    layout: Layout,
    mu: f64,
    vars: Vec<Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn inputs(tape: &'t Tape, params: &NetworkParams) -> Self {
        Self::record(tape, params, Tape::input)
    }

    pub fn constants(tape: &'t Tape, params: &NetworkParams) -> Self {
        Self::record(tape, params, Tape::constant)
    }

    fn record(tape: &'t Tape, params: &NetworkParams, leaf: fn(&'t Tape, f64) -> Var<'t>) -> Self {
        ParamVars {
            layout: params.layout(),
            mu: params.mu(),
            vars: params.as_slice().iter().map(|&v| leaf(tape, v)).collect(),
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn w(&self, layer: usize, r: usize, c: usize) -> Var<'t> {
        let cols = self.layout.weight_shape(layer).1;
        self.vars[self.layout.weight_offset(layer) + r * cols + c]
    }

    fn b(&self, layer: usize, r: usize) -> Var<'t> {
        self.vars[self.layout.bias_offset(layer) + r]
    }
}

/// Records û(x) and, when `tangents` is set, the d components of ∇ₓû(x).
pub fn network_on_tape<'t>(
    tape: &'t Tape,
    params: &ParamVars<'t>,
    x: &[f64],
    tangents: bool,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let Layout { input_dim: d, width: m } = params.layout;
    if x.len() != d {
        return Err(Error::usage(format!(
            "point has {} coordinates, network expects {d}",
            x.len()
        )));
    }
    let mu = params.mu;
    let mut s: Vec<Var<'t>> = (0..m)
        .map(|r| {
            let terms: Vec<Var<'t>> = (0..d).map(|c| params.w(1, r, c) * x[c]).collect();
            tape.sum(&terms) + params.b(1, r)
        })
        .collect();
    let mut t: Vec<Vec<Var<'t>>> = if tangents {
        (0..d).map(|j| (0..m).map(|r| params.w(1, r, j)).collect()).collect()
    } else {
        Vec::new()
    };
    for layer in 2..=4 {
        let mut slopes = Vec::with_capacity(m);
        let next: Vec<Var<'t>> = (0..m)
            .map(|r| {
                let terms: Vec<Var<'t>> = (0..m).map(|c| params.w(layer, r, c) * s[c]).collect();
                let z = tape.sum(&terms) + params.b(layer, r);
                slopes.push(leaky_relu_slope(z.value(), mu));
                z.leaky_relu(mu)
            })
            .collect();
        for tj in t.iter_mut() {
            *tj = (0..m)
                .map(|r| {
                    let terms: Vec<Var<'t>> = (0..m).map(|c| params.w(layer, r, c) * tj[c]).collect();
                    tape.sum(&terms) * slopes[r]
                })
                .collect();
        }
        s = next;
    }
    let out_terms: Vec<Var<'t>> = (0..m).map(|c| params.w(DEPTH, 0, c) * s[c]).collect();
    let out = tape.sum(&out_terms) + params.b(DEPTH, 0);
    let grad = t
        .iter()
        .map(|tj| {
            let terms: Vec<Var<'t>> = (0..m).map(|c| params.w(DEPTH, 0, c) * tj[c]).collect();
            tape.sum(&terms)
        })
        .collect();
    Ok((out, grad))
}

/// ∇ₓû(x; θ) as plain numbers.
pub fn input_gradient(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(params.forward_with_gradient(x)?.1)
}

/// ∇ₓû(x; θ) recorded on `tape`, each component differentiable in θ.
pub fn input_gradient_vars<'t>(tape: &'t Tape, params: &ParamVars<'t>, x: &[f64]) -> Result<Vec<Var<'t>>> {
    Ok(network_on_tape(tape, params, x, true)?.1)
}

/// Records `loss_builder` on a fresh tape with θ as inputs and returns the
/// loss value together with its exact gradient.
pub fn grad_wrt_params<F>(params: &NetworkParams, loss_builder: F) -> Result<(f64, ParamGrad)>
where
    F: for<'t> FnOnce(&'t Tape, &ParamVars<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars = ParamVars::inputs(&tape, params);
    let loss = loss_builder(&tape, &vars)?;
    if !loss.value().is_finite() {
        return Err(Error::numerical(format!(
            "loss evaluated to {} (tape node {})",
            loss.value(),
            loss.index()
        )));
    }
    let adj = tape.backward(loss)?;
    let values = vars.vars().iter().map(|v| adj[v.index()]).collect();
    Ok((
        loss.value(),
        ParamGrad {
            layout: params.layout(),
            values,
        },
    ))
}

/// Central differences (f(x + h e_i) − f(x − h e_i)) / 2h for every i.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// |a − b| / max(|a|, |b|), 0 when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative error over components where either side exceeds
/// `floor` in magnitude, with the index where it occurs.
pub fn max_relative_error(analytic: &[f64], reference: &[f64], floor: f64) -> (f64, Option<usize>) {
    analytic
        .iter()
        .zip(reference)
        .enumerate()
        .filter(|(_, (a, b))| a.abs() > floor || b.abs() > floor)
        .map(|(i, (a, b))| (relative_error(*a, *b), Some(i)))
        .fold((0.0, None), |acc, e| if e.0 > acc.0 { e } else { acc })
}
