//! Batched evaluation of the network, its input gradient, and the
//! vector-Jacobian product back to the parameters.
//!
//! This is the hand-derived counterpart of recording the network on the
//! scalar tape (`autodiff::network_on_tape`): the same forward-mode tangent
//! propagation with σ'(z) held constant, followed by reverse accumulation.
//! Samples are processed in column blocks so that every layer is a single
//! matrix-matrix product.
//!
//! For a block of B samples with t tangent directions (t = 0 or d) the
//! hidden state of layer l is stored column-major as the m × (1+t)B matrix
//! `[S_l | T_l,1 | … | T_l,t]`, where T_l,j = ∂S_l/∂x_j.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use rayon::prelude::*;

use super::{NetworkParams, ParamGrad};

/// Per-sample network outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutputs {
    /// û(x_i), one per point.
    pub values: Vec<f64>,
    /// ∇ₓû(x_i) row-major `n × d`; empty when tangents were not requested.
    pub grads: Vec<f64>,
}

/// Evaluation settings shared by all batched passes.
#[derive(Debug, Clone, Copy)]
pub struct BatchConfig {
    /// Samples per block.
    pub chunk: usize,
    /// Sum per-block gradients in block order, independent of the thread
    /// count. Otherwise rayon's reduction tree decides the order.
    pub deterministic: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            chunk: 128,
            deterministic: true,
        }
    }
}

/// Column-major rows × cols buffer whose allocation is reused.
#[derive(Default)]
struct Buf {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Buf {
    /// Reshapes without clearing; callers overwrite every entry.
    fn reshape(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, 0.0);
    }

    fn mat(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.rows, self.cols)
    }

    fn block(&self, start: usize, len: usize) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data[start * self.rows..(start + len) * self.rows], self.rows, len)
    }

    fn mat_mut(&mut self) -> MatMut<'_, f64> {
        MatMut::from_column_major_slice_mut(&mut self.data, self.rows, self.cols)
    }

    /// Row sums over columns [start, start+len).
    fn row_sums(&self, start: usize, len: usize, out: &mut [f64]) {
        out.fill(0.0);
        for col in self.data[start * self.rows..(start + len) * self.rows].chunks_exact(self.rows) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += v;
            }
        }
    }
}

fn gemm(dst: MatMut<'_, f64>, accum: Accum, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    matmul(dst, accum, lhs, rhs, 1.0, Par::Seq);
}

/// Activations of one block plus backward scratch, reused across blocks.
#[derive(Default)]
struct Scratch {
    /// Layer-1 output S1 (m × B).
    s1: Buf,
    /// Stacked states of layers 2, 3, 4.
    stacks: [Buf; 3],
    /// σ'(z) of layers 2, 3, 4 (m × B).
    slopes: [Buf; 3],
    z: Buf,
    w2w1: Buf,
    out: Buf,
    seeds: Buf,
    dstack: Buf,
    prev: Buf,
    ry: Buf,
    ds1: Buf,
    ry_w1: Vec<f64>,
}

/// Points `start..start + len` of a row-major n × d buffer.
fn block_points(points: &[f64], d: usize, start: usize, len: usize) -> &[f64] {
    &points[start * d..(start + len) * d]
}

/// z += bias (per column), then S = σ(z) and σ'(z), written as selects so
/// the loop vectorizes.
fn activate(z: &mut [f64], bias: &[f64], mu: f64, s: &mut [f64], slope: &mut [f64]) {
    let m = bias.len();
    for start in (0..z.len()).step_by(m) {
        let zc = &mut z[start..start + m];
        let sc = &mut s[start..start + m];
        let dc = &mut slope[start..start + m];
        for r in 0..m {
            let v = zc[r] + bias[r];
            zc[r] = v;
            let k = mu + (1.0 - mu) * f64::from(u8::from(v > 0.0));
            sc[r] = v * k;
            dc[r] = k;
        }
    }
}

/// Fills the activations of `ws` and writes û and ∇ₓû (row-major B × t)
/// into `values` / `grads`.
fn forward_block(p: &NetworkParams, x_flat: &[f64], tangents: bool, ws: &mut Scratch, values: &mut [f64], grads: &mut [f64]) {
    let layout = p.layout();
    let (d, m, mu) = (layout.input_dim, layout.width, p.mu());
    let b = x_flat.len() / layout.input_dim;
    let t = if tangents { d } else { 0 };
    let cols = (1 + t) * b;
    let mb = m * b;

    // layer 1 has only d inputs, too thin for a GEMM
    let w1 = layout.weight_slice(1, p.as_slice());
    let b1 = p.bias(1);
    ws.s1.reshape(m, b);
    for (col, xs) in ws.s1.data.chunks_exact_mut(m).zip(x_flat.chunks_exact(d)) {
        for (r, o) in col.iter_mut().enumerate() {
            let row = &w1[r * d..(r + 1) * d];
            *o = b1[r] + row.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    for layer in 2..=4 {
        let i = layer - 2;
        let w = p.weight(layer);
        let z = &mut ws.z;
        if layer == 2 {
            z.reshape(m, b);
            gemm(z.mat_mut(), Accum::Replace, w, ws.s1.mat());
        } else {
            z.reshape(m, cols);
            gemm(z.mat_mut(), Accum::Replace, w, ws.stacks[i - 1].mat());
        }
        let (stack, slope) = (&mut ws.stacks[i], &mut ws.slopes[i]);
        slope.reshape(m, b);
        stack.reshape(m, cols);
        activate(&mut z.data[..mb], p.bias(layer), mu, &mut stack.data[..mb], &mut slope.data);
        if layer == 2 {
            // tangents of S1 are the columns of W1, so W2 T1_j = (W2 W1)[:, j]
            if t > 0 {
                ws.w2w1.reshape(m, d);
                let w2 = layout.weight_slice(2, p.as_slice());
                for j in 0..d {
                    for r in 0..m {
                        ws.w2w1.data[j * m + r] = (0..m).map(|c| w2[r * m + c] * w1[c * d + j]).sum();
                    }
                }
                for j in 0..t {
                    let c = &ws.w2w1.data[j * m..(j + 1) * m];
                    let dst = &mut stack.data[(1 + j) * mb..(2 + j) * mb];
                    for (dcol, scol) in dst.chunks_exact_mut(m).zip(slope.data.chunks_exact(m)) {
                        for ((o, &s), &cc) in dcol.iter_mut().zip(scol).zip(c) {
                            *o = s * cc;
                        }
                    }
                }
            }
        } else {
            for j in 0..t {
                let range = (1 + j) * mb..(2 + j) * mb;
                for ((o, &zz), &s) in stack.data[range.clone()].iter_mut().zip(&z.data[range]).zip(&slope.data) {
                    *o = s * zz;
                }
            }
        }
    }

    ws.out.reshape(1, cols);
    let w5 = layout.weight_slice(5, p.as_slice());
    for (o, col) in ws.out.data.iter_mut().zip(ws.stacks[2].data.chunks_exact(m)) {
        *o = w5.iter().zip(col).map(|(w, s)| w * s).sum();
    }
    let b5 = p.bias(5)[0];
    for (v, o) in values.iter_mut().zip(&ws.out.data[..b]) {
        *v = o + b5;
    }
    for j in 0..t {
        for (i, v) in ws.out.data[(1 + j) * b..(2 + j) * b].iter().enumerate() {
            grads[i * t + j] = *v;
        }
    }
}

fn scale_by_slope(dstack: &mut Buf, slope: &Buf) {
    let n = slope.data.len();
    for blk in dstack.data.chunks_exact_mut(n) {
        for (g, s) in blk.iter_mut().zip(&slope.data) {
            *g *= s;
        }
    }
}

fn grad_weight_mut<'a>(grad: &'a mut ParamGrad, layer: usize) -> MatMut<'a, f64> {
    let (r, c) = grad.layout.weight_shape(layer);
    let off = grad.layout.weight_offset(layer);
    MatMut::from_row_major_slice_mut(&mut grad.values[off..off + r * c], r, c)
}

fn grad_weight_slice(grad: &mut ParamGrad, layer: usize) -> &mut [f64] {
    let (r, c) = grad.layout.weight_shape(layer);
    let off = grad.layout.weight_offset(layer);
    &mut grad.values[off..off + r * c]
}

fn bias_mut(grad: &mut ParamGrad, layer: usize) -> &mut [f64] {
    let off = grad.layout.bias_offset(layer);
    let len = grad.layout.bias_len(layer);
    &mut grad.values[off..off + len]
}

/// Reverse sweep over the activations currently held in `ws`.
///
/// An empty `seed_grads` seeds only the values, in which case the tangent
/// part of the stored activations is ignored.
fn backward_block(
    p: &NetworkParams,
    x_flat: &[f64],
    ws: &mut Scratch,
    seed_values: &[f64],
    seed_grads: &[f64],
    grad: &mut ParamGrad,
) {
    let layout = p.layout();
    let m = layout.width;
    let b = seed_values.len();
    let t = seed_grads.len() / b;
    let cols = (1 + t) * b;

    // seeds stacked as [gu | gg_1 | … | gg_t]
    let seeds = &mut ws.seeds;
    seeds.reshape(1, cols);
    seeds.data[..b].copy_from_slice(seed_values);
    for j in 0..t {
        for i in 0..b {
            seeds.data[(1 + j) * b + i] = seed_grads[i * t + j];
        }
    }

    // output layer
    {
        let dw5 = grad_weight_slice(grad, 5);
        for (col, &s) in ws.stacks[2].data[..cols * m].chunks_exact(m).zip(&seeds.data) {
            for (g, v) in dw5.iter_mut().zip(col) {
                *g += s * v;
            }
        }
    }
    bias_mut(grad, 5)[0] = seed_values.iter().sum();
    let w5 = layout.weight_slice(5, p.as_slice());
    ws.dstack.reshape(m, cols);
    for (col, &s) in ws.dstack.data.chunks_exact_mut(m).zip(&seeds.data) {
        for (o, w) in col.iter_mut().zip(w5) {
            *o = w * s;
        }
    }

    for layer in [4usize, 3] {
        let i = layer - 2;
        scale_by_slope(&mut ws.dstack, &ws.slopes[i]);
        ws.dstack.row_sums(0, b, bias_mut(grad, layer));
        gemm(
            grad_weight_mut(grad, layer),
            Accum::Replace,
            ws.dstack.mat(),
            ws.stacks[i - 1].block(0, cols).transpose(),
        );
        ws.prev.reshape(m, cols);
        gemm(ws.prev.mat_mut(), Accum::Replace, p.weight(layer).transpose(), ws.dstack.mat());
        std::mem::swap(&mut ws.dstack, &mut ws.prev);
    }

    // layer 2: only the value block of the S1 stack depends on x
    scale_by_slope(&mut ws.dstack, &ws.slopes[0]);
    ws.dstack.row_sums(0, b, bias_mut(grad, 2));
    let dz2 = ws.dstack.block(0, b);
    gemm(grad_weight_mut(grad, 2), Accum::Replace, dz2, ws.s1.mat().transpose());
    let d = layout.input_dim;
    let w1 = layout.weight_slice(1, p.as_slice());
    let w2 = layout.weight_slice(2, p.as_slice());
    // ry[:, j] = Σ_b dY2_j, the adjoint of W2·W1[:, j]
    if t > 0 {
        ws.ry.reshape(m, t);
        for j in 0..t {
            ws.dstack.row_sums((1 + j) * b, b, &mut ws.ry.data[j * m..(j + 1) * m]);
        }
        let dw2 = grad_weight_slice(grad, 2);
        for r in 0..m {
            for c in 0..m {
                dw2[r * m + c] += (0..t).map(|j| ws.ry.data[j * m + r] * w1[c * d + j]).sum::<f64>();
            }
        }
    }
    ws.ds1.reshape(m, b);
    gemm(ws.ds1.mat_mut(), Accum::Replace, p.weight(2).transpose(), dz2);

    // layer 1
    ws.ds1.row_sums(0, b, bias_mut(grad, 1));
    // accumulate dW1 column-major, then store row-major
    let acc = &mut ws.ry_w1;
    acc.clear();
    acc.resize(m * d, 0.0);
    for (col, xs) in ws.ds1.data.chunks_exact(m).zip(x_flat.chunks_exact(d)) {
        for (c, &xc) in xs.iter().enumerate() {
            for (a, g) in acc[c * m..(c + 1) * m].iter_mut().zip(col) {
                *a += g * xc;
            }
        }
    }
    let dw1 = grad_weight_slice(grad, 1);
    for r in 0..m {
        for c in 0..d {
            dw1[r * d + c] = acc[c * m + r];
        }
    }
    for j in 0..t {
        for r in 0..m {
            dw1[r * d + j] += (0..m).map(|c| w2[c * m + r] * ws.ry.data[j * m + c]).sum::<f64>();
        }
    }
}

fn block_ranges(n: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| (c * chunk, chunk.min(n - c * chunk)))
        .collect()
}

/// Seeds for one vector-Jacobian product over a block: `values[i]` pairs
/// with û(x_i), `grads[i * d + j]` with ∂_j û(x_i). Empty `grads` seeds
/// the values only.
#[derive(Debug, Clone, Default)]
pub struct Seeds {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

/// Output of [`fused_pass`].
pub struct FusedPass {
    pub outputs: BatchOutputs,
    /// One gradient per seed set, summed over all blocks.
    pub grads: Vec<ParamGrad>,
}

/// Forward and reverse sweeps block by block while the activations are
/// still in cache.
///
/// `seeds(start, values, grads)` sees the outputs of the block beginning at
/// point `start` and returns `k` seed sets; each yields its own parameter
/// gradient. With `config.deterministic` block gradients are summed in
/// block order. Use this when the seeds are local to a point, or when the loss
/// depends on global sums only through a few scalars that can be applied
/// afterwards.
pub fn fused_pass<F>(params: &NetworkParams, points: &[f64], tangents: bool, config: BatchConfig, k: usize, seeds: F) -> FusedPass
where
    F: Fn(usize, &[f64], &[f64]) -> Vec<Seeds> + Sync,
{
    let d = params.input_dim();
    assert_eq!(points.len() % d, 0, "point buffer is not n × d");
    let n = points.len() / d;
    let t = if tangents { d } else { 0 };
    let layout = params.layout();
    let ranges = block_ranges(n, config.chunk);
    let run = |ws: &mut Scratch, &(start, len): &(usize, usize)| {
        let x = block_points(points, d, start, len);
        let mut values = vec![0.0; len];
        let mut grads = vec![0.0; len * t];
        forward_block(params, x, tangents, ws, &mut values, &mut grads);
        let sets = seeds(start, &values, &grads);
        assert_eq!(sets.len(), k, "seed callback returned the wrong number of sets");
        let pgrads: Vec<ParamGrad> = sets
            .iter()
            .map(|s| {
                assert_eq!(s.values.len(), len, "one value seed per point");
                assert!(s.grads.is_empty() || s.grads.len() == len * t, "gradient seeds need one entry per point and direction");
                let mut g = ParamGrad::zeros(layout);
                backward_block(params, x, ws, &s.values, &s.grads, &mut g);
                g
            })
            .collect();
        (values, grads, pgrads)
    };
    let mut out = FusedPass {
        outputs: BatchOutputs {
            values: Vec::with_capacity(n),
            grads: Vec::with_capacity(n * t),
        },
        grads: vec![ParamGrad::zeros(layout); k],
    };
    if config.deterministic {
        let parts: Vec<_> = ranges.par_iter().map_init(Scratch::default, run).collect();
        for (v, g, pg) in parts {
            out.outputs.values.extend(v);
            out.outputs.grads.extend(g);
            for (acc, p) in out.grads.iter_mut().zip(&pg) {
                acc.add_assign(p);
            }
        }
    } else {
        let (parts, sums): (Vec<_>, Vec<_>) = ranges
            .par_iter()
            .map_init(Scratch::default, run)
            .map(|(v, g, pg)| ((v, g), pg))
            .unzip();
        // unordered reduction of the block gradients
        let total = sums.into_par_iter().reduce(
            || vec![ParamGrad::zeros(layout); k],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.add_assign(y);
                }
                a
            },
        );
        out.grads = total;
        for (v, g) in parts {
            out.outputs.values.extend(v);
            out.outputs.grads.extend(g);
        }
    }
    out
}

/// Forward only, without keeping activations.
pub fn evaluate(params: &NetworkParams, points: &[f64], tangents: bool, config: BatchConfig) -> BatchOutputs {
    let d = params.input_dim();
    assert_eq!(points.len() % d, 0, "point buffer is not n × d");
    let n = points.len() / d;
    let t = if tangents { d } else { 0 };
    let parts: Vec<(Vec<f64>, Vec<f64>)> = block_ranges(n, config.chunk)
        .into_par_iter()
        .map_init(Scratch::default, |ws, (start, len)| {
            let mut values = vec![0.0; len];
            let mut grads = vec![0.0; len * t];
            forward_block(params, block_points(points, d, start, len), tangents, ws, &mut values, &mut grads);
            (values, grads)
        })
        .collect();
    let mut outputs = BatchOutputs {
        values: Vec::with_capacity(n),
        grads: Vec::with_capacity(n * t),
    };
    for (v, g) in parts {
        outputs.values.extend(v);
        outputs.grads.extend(g);
    }
    outputs
}
