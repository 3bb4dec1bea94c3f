//! Five-layer densely connected scalar network.
//!
//! ```text
//! S1 = W1 x + b1
//! Sk = σ(Wk S(k-1) + bk)     k = 2, 3, 4
//! u  = W5 S4 + b5
//! ```
//!
//! with the leaky rectifier σ(s) = max{0, s} + μ min{0, s}. The input and
//! output layers are linear. All parameters live in one flat vector in the
//! order W1, b1, W2, b2, ..., W5, b5 (weights row-major), which is also the
//! checkpoint order.

pub mod batch;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use faer::MatRef;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use checkpoint::{load_params, save_params};

/// Default leak coefficient of the hidden activations.
pub const DEFAULT_MU: f64 = 0.03;

/// Number of layers (affine maps) in the network.
pub const DEPTH: usize = 5;

/// σ(s) = max{0, s} + μ·min{0, s}.
#[inline]
pub fn leaky_relu(s: f64, mu: f64) -> f64 {
    s.max(0.0) + mu * s.min(0.0)
}

/// Derivative of σ. At s = 0 the subgradient μ is used.
#[inline]
pub fn leaky_relu_slope(s: f64, mu: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else {
        mu
    }
}

/// Input dimension and hidden width; determines every tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layout {
    pub input_dim: usize,
    pub width: usize,
}

impl Layout {
    pub fn new(input_dim: usize, width: usize) -> Result<Self> {
        if input_dim == 0 || width == 0 {
            return Err(Error::usage(format!(
                "network needs d >= 1 and m >= 1, got d={input_dim}, m={width}"
            )));
        }
        Ok(Layout { input_dim, width })
    }

    /// (rows, cols) of weight matrix `layer` (1-based).
    pub fn weight_shape(&self, layer: usize) -> (usize, usize) {
        let (d, m) = (self.input_dim, self.width);
        match layer {
            1 => (m, d),
            2..=4 => (m, m),
            5 => (1, m),
            _ => panic!("layer index {layer} out of 1..=5"),
        }
    }

    pub fn bias_len(&self, layer: usize) -> usize {
        match layer {
            1..=4 => self.width,
            5 => 1,
            _ => panic!("layer index {layer} out of 1..=5"),
        }
    }

    /// Offset of Wk in the flat vector.
    pub fn weight_offset(&self, layer: usize) -> usize {
        let mut off = 0;
        for l in 1..layer {
            let (r, c) = self.weight_shape(l);
            off += r * c + self.bias_len(l);
        }
        off
    }

    pub fn bias_offset(&self, layer: usize) -> usize {
        let (r, c) = self.weight_shape(layer);
        self.weight_offset(layer) + r * c
    }

    pub fn num_params(&self) -> usize {
        self.bias_offset(DEPTH) + 1
    }

    /// Flat index of a coordinate, after range checking.
    pub fn flat_index(&self, coord: &Coord) -> Result<usize> {
        if !(1..=DEPTH).contains(&coord.layer) {
            return Err(Error::usage(format!("layer {} out of 1..=5", coord.layer)));
        }
        match coord.kind {
            TensorKind::Weight => {
                let (r, c) = self.weight_shape(coord.layer);
                if coord.row >= r || coord.col >= c {
                    return Err(Error::usage(format!(
                        "{coord} out of range for W{} of shape {r}x{c}",
                        coord.layer
                    )));
                }
                Ok(self.weight_offset(coord.layer) + coord.row * c + coord.col)
            }
            TensorKind::Bias => {
                let n = self.bias_len(coord.layer);
                if coord.row >= n || coord.col != 0 {
                    return Err(Error::usage(format!(
                        "{coord} out of range for b{} of length {n}",
                        coord.layer
                    )));
                }
                Ok(self.bias_offset(coord.layer) + coord.row)
            }
        }
    }

    /// Row-major entries of Wk inside `flat`.
    pub fn weight_slice<'a>(&self, layer: usize, flat: &'a [f64]) -> &'a [f64] {
        let (r, c) = self.weight_shape(layer);
        let off = self.weight_offset(layer);
        &flat[off..off + r * c]
    }

    pub fn weight<'a>(&self, layer: usize, flat: &'a [f64]) -> MatRef<'a, f64> {
        let (r, c) = self.weight_shape(layer);
        MatRef::from_row_major_slice(self.weight_slice(layer, flat), r, c)
    }

    pub fn bias<'a>(&self, layer: usize, flat: &'a [f64]) -> &'a [f64] {
        let off = self.bias_offset(layer);
        &flat[off..off + self.bias_len(layer)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

/// One scalar entry of θ, 0-based internally. Text form is 1-based like the
/// usual matrix notation: `W3,7,45` or `b1,60` (also `b5`, and a bare
/// `3,7,45` meaning a weight).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub kind: TensorKind,
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TensorKind::Weight => write!(f, "W{},{},{}", self.layer, self.row + 1, self.col + 1),
            TensorKind::Bias if self.layer == DEPTH && self.row == 0 => write!(f, "b{}", self.layer),
            TensorKind::Bias => write!(f, "b{},{}", self.layer, self.row + 1),
        }
    }
}

impl FromStr for Coord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::usage(format!("cannot parse parameter coordinate '{s}'"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let head = parts[0];
        let (kind, layer_str) = if let Some(rest) = head.strip_prefix(['W', 'w']) {
            (TensorKind::Weight, rest)
        } else if let Some(rest) = head.strip_prefix(['b', 'B']) {
            (TensorKind::Bias, rest)
        } else {
            (TensorKind::Weight, head)
        };
        let layer: usize = layer_str.parse().map_err(|_| bad())?;
        let idx = |p: &str| -> Result<usize> {
            let v: usize = p.parse().map_err(|_| bad())?;
            v.checked_sub(1).ok_or_else(bad)
        };
        match (kind, parts.len()) {
            (TensorKind::Weight, 3) => Ok(Coord {
                kind,
                layer,
                row: idx(parts[1])?,
                col: idx(parts[2])?,
            }),
            (TensorKind::Bias, 2) => Ok(Coord {
                kind,
                layer,
                row: idx(parts[1])?,
                col: 0,
            }),
            (TensorKind::Bias, 1) if layer == DEPTH => Ok(Coord {
                kind,
                layer,
                row: 0,
                col: 0,
            }),
            _ => Err(bad()),
        }
    }
}

/// The weight set θ of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layout: Layout,
    mu: f64,
    values: Vec<f64>,
}

/// Gradient of a scalar with respect to every entry of a [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(layout: Layout) -> Self {
        ParamGrad {
            layout,
            values: vec![0.0; layout.num_params()],
        }
    }

    pub fn weight(&self, layer: usize) -> MatRef<'_, f64> {
        self.layout.weight(layer, &self.values)
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        self.layout.bias(layer, &self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Draws θ with every weight i.i.d. uniform on ±√(6/(fan_in + fan_out)) and
/// all biases zero. ChaCha8 seeded from `seed`; weights drawn in flat order.
pub fn init_params(input_dim: usize, width: usize, mu: f64, seed: u64) -> Result<NetworkParams> {
    let layout = Layout::new(input_dim, width)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::usage(format!("leak mu must be finite and >= 0, got {mu}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.num_params()];
    for layer in 1..=DEPTH {
        let (fan_out, fan_in) = layout.weight_shape(layer);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let off = layout.weight_offset(layer);
        for v in &mut values[off..off + fan_in * fan_out] {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(NetworkParams { layout, mu, values })
}

impl NetworkParams {
    /// Builds parameters from a flat vector in checkpoint order.
    pub fn from_flat(layout: Layout, mu: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.num_params() {
            return Err(Error::usage(format!(
                "expected {} parameters for d={}, m={}, got {}",
                layout.num_params(),
                layout.input_dim,
                layout.width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("parameter {i} is not finite")));
        }
        Ok(NetworkParams { layout, mu, values })
    }

    /// All weights and biases zero except b5.
    pub fn constant(input_dim: usize, width: usize, mu: f64, value: f64) -> Result<Self> {
        let layout = Layout::new(input_dim, width)?;
        let mut values = vec![0.0; layout.num_params()];
        values[layout.bias_offset(DEPTH)] = value;
        Ok(NetworkParams { layout, mu, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weight(&self, layer: usize) -> MatRef<'_, f64> {
        self.layout.weight(layer, &self.values)
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        self.layout.bias(layer, &self.values)
    }

    pub fn get(&self, coord: &Coord) -> Result<f64> {
        Ok(self.values[self.layout.flat_index(coord)?])
    }

    pub fn set(&mut self, coord: &Coord, value: f64) -> Result<()> {
        let i = self.layout.flat_index(coord)?;
        self.values[i] = value;
        Ok(())
    }

    /// Multiplies W5 and b5 by `c`, which scales the output by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let off = self.layout.weight_offset(DEPTH);
        for v in &mut self.values[off..] {
            *v *= c;
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.input_dim {
            return Err(Error::usage(format!(
                "point has {} coordinates, network expects {}",
                x.len(),
                self.layout.input_dim
            )));
        }
        Ok(())
    }

    /// û(x; θ).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.eval(x, false).0)
    }

    /// (û(x; θ), ∇ₓû(x; θ)) by forward-mode tangents.
    pub fn forward_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_point(x)?;
        Ok(self.eval(x, true))
    }

    fn eval(&self, x: &[f64], tangents: bool) -> (f64, Vec<f64>) {
        let (d, m) = (self.layout.input_dim, self.layout.width);
        let dot = |row: &[f64], v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let w1 = self.layout.weight_slice(1, &self.values);
        let b1 = self.bias(1);
        let mut s: Vec<f64> = (0..m).map(|r| b1[r] + dot(&w1[r * d..(r + 1) * d], x)).collect();
        // t[j][r] = ∂S_r / ∂x_j
        let mut t: Vec<Vec<f64>> = if tangents {
            (0..d).map(|j| (0..m).map(|r| w1[r * d + j]).collect()).collect()
        } else {
            Vec::new()
        };
        for layer in 2..=4 {
            let w = self.layout.weight_slice(layer, &self.values);
            let b = self.bias(layer);
            let mut next = vec![0.0; m];
            let mut slopes = vec![0.0; m];
            for r in 0..m {
                let z = b[r] + dot(&w[r * m..(r + 1) * m], &s);
                next[r] = leaky_relu(z, self.mu);
                slopes[r] = leaky_relu_slope(z, self.mu);
            }
            for tj in t.iter_mut() {
                let prev = std::mem::take(tj);
                *tj = (0..m)
                    .map(|r| slopes[r] * dot(&w[r * m..(r + 1) * m], &prev))
                    .collect();
            }
            s = next;
        }
        let w5 = self.layout.weight_slice(5, &self.values);
        let out = self.bias(5)[0] + dot(w5, &s);
        let grad = t.iter().map(|tj| dot(w5, tj)).collect();
        (out, grad)
    }

    /// Evaluates the network at every point of a row-major `n × d` slice.
    pub fn forward_many(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.layout.input_dim;
        if !points.len().is_multiple_of(d) {
            return Err(Error::usage("point buffer length is not a multiple of d"));
        }
        Ok(points.chunks_exact(d).map(|x| self.eval(x, false).0).collect())
    }
}
