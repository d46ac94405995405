//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! Every value on the tape is a `rows × cols` matrix; vectors are `1 × n`.
//! Volumetric data is stored as `(T·H·W) × C` with the grid passed to the
//! ops that need it. All reductions run in a fixed order, so repeated
//! evaluation is bit-identical.

use std::ops::Range;
use std::rc::Rc;

use crate::error::{MfmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatio-temporal grid of a `(T·H·W) × C` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }

    pub fn cells(&self) -> usize {
        self.t * self.h * self.w
    }
}

/// Per-row rotation angles for rotary embeddings: `angles[row][pair]`
/// rotates channels `(2·pair, 2·pair+1)`.
#[derive(Clone, Debug)]
pub struct RotaryTable {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    pub pairs: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    RmsNormRows(Var, Vec<f64>),
    Rotary(Var, Rc<RotaryTable>),
    Cols(Var, usize),
    ConcatCols(Vec<Var>),
    Conv3d { x: Var, w: Var, grid: Grid },
    AvgPool2 { x: Var, grid: Grid },
    TemporalGroup { x: Var, groups: Vec<Range<usize>>, h: usize, w: usize },
    Mean(Var),
    MseConst(Var, Rc<Vec<f64>>),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    // false for constants and everything computed only from constants
    grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Silu(a)
            | Op::Gelu(a)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows(a, _)
            | Op::RmsNormRows(a, _)
            | Op::Rotary(a, _)
            | Op::Cols(a, _)
            | Op::Mean(a)
            | Op::MseConst(a, _) => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
            Op::Conv3d { x, w, .. } => vec![*x, *w],
            Op::AvgPool2 { x, .. } | Op::TemporalGroup { x, .. } => vec![*x],
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`; zeros when `v` does not influence the output.
    pub fn of(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                vec![0.0; r * c]
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// `out[m×n] += a[m×k] · b[k×n]`.
fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let grad = op.inputs().iter().any(|v| self.nodes[v.0].grad);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        let v = self.push(rows, cols, value, Op::Leaf);
        self.nodes[v.0].grad = true;
        v
    }

    /// Input that never receives a gradient; work flowing only into
    /// constants is skipped during backpropagation.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Errors when any element of `v` is NaN or infinite.
    pub fn check_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(MfmError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {m}x{k} · {k2}x{n}");
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, self.value(a), self.value(b), m, k, n);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = transpose(self.value(a), r, c);
        self.push(c, r, out, Op::Transpose(a))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "element-wise shape");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(r, c, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m×n] + row[1×n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row shape");
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(n)
            .flat_map(|x| x.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        self.push(m, n, out, Op::AddRow(a, row))
    }

    /// `a[m×n] ⊙ row[1×n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row shape");
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(n)
            .flat_map(|x| x.iter().zip(r).map(|(a, b)| a * b))
            .collect();
        self.push(m, n, out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x + s).collect();
        self.push(r, c, out, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| silu(x)).collect();
        self.push(r, c, out, Op::Silu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        self.push(r, c, out, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(a).chunks_exact(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            out.extend(exps.into_iter().map(|e| e / total));
        }
        self.push(r, c, out, Op::SoftmaxRows(a))
    }

    /// Row-wise `(x − mean) / sqrt(var + eps)` without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (r, c) = self.shape(a);
        let mut out = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for row in self.value(a).chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            out.extend(row.iter().map(|x| (x - mean) * inv));
        }
        self.push(r, c, out, Op::LayerNormRows(a, inv_std))
    }

    /// Row-wise `x / sqrt(mean(x²) + eps)` without gain.
    pub fn rms_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (r, c) = self.shape(a);
        let mut out = Vec::with_capacity(r * c);
        let mut inv_rms = Vec::with_capacity(r);
        for row in self.value(a).chunks_exact(c) {
            let ms = row.iter().map(|x| x * x).sum::<f64>() / c as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            inv_rms.push(inv);
            out.extend(row.iter().map(|x| x * inv));
        }
        self.push(r, c, out, Op::RmsNormRows(a, inv_rms))
    }

    /// Rotates channel pairs of every row by the table's angles.
    pub fn rotary(&mut self, a: Var, table: Rc<RotaryTable>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(c, 2 * table.pairs, "rotary width");
        assert_eq!(table.cos.len(), r * table.pairs, "rotary rows");
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            for p in 0..table.pairs {
                let (cs, sn) = (table.cos[row * table.pairs + p], table.sin[row * table.pairs + p]);
                let (x0, x1) = (x[row * c + 2 * p], x[row * c + 2 * p + 1]);
                out[row * c + 2 * p] = x0 * cs - x1 * sn;
                out[row * c + 2 * p + 1] = x0 * sn + x1 * cs;
            }
        }
        self.push(r, c, out, Op::Rotary(a, table))
    }

    /// Columns `[start, start+len)`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "column slice out of range");
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push(r, len, out, Op::Cols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, r, "concat rows");
                self.shape(p).1
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[row * w..(row + 1) * w]);
            }
        }
        self.push(r, total, out, Op::ConcatCols(parts.to_vec()))
    }

    /// 3×3×3 convolution with zero padding 1 over a `(T·H·W) × Cin` volume.
    /// Weights are `(27·Cin) × Cout`, row index `((kt·3+ky)·3+kx)·Cin + ci`.
    pub fn conv3d(&mut self, x: Var, w: Var, grid: Grid) -> Var {
        let (cells, cin) = self.shape(x);
        assert_eq!(cells, grid.cells(), "conv3d grid");
        let (wr, cout) = self.shape(w);
        assert_eq!(wr, 27 * cin, "conv3d weight rows");
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; cells * cout];
        conv3d_visit(grid, |o, i, k| {
            let orow = &mut out[o * cout..(o + 1) * cout];
            for ci in 0..cin {
                let xval = xv[i * cin + ci];
                if xval == 0.0 {
                    continue;
                }
                let wrow = &wv[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                for (acc, wvv) in orow.iter_mut().zip(wrow) {
                    *acc += xval * wvv;
                }
            }
        });
        self.push(cells, cout, out, Op::Conv3d { x, w, grid })
    }

    /// 2×2 spatial average pooling; requires even `H` and `W`.
    pub fn avg_pool2(&mut self, x: Var, grid: Grid) -> Var {
        let (cells, c) = self.shape(x);
        assert_eq!(cells, grid.cells());
        assert!(grid.h % 2 == 0 && grid.w % 2 == 0, "avg_pool2 needs even H, W");
        let (h2, w2) = (grid.h / 2, grid.w / 2);
        let xv = self.value(x);
        let mut out = vec![0.0; grid.t * h2 * w2 * c];
        for t in 0..grid.t {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let o = (t * h2 + y) * w2 + xx;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = (t * grid.h + 2 * y + dy) * grid.w + 2 * xx + dx;
                        for ch in 0..c {
                            out[o * c + ch] += 0.25 * xv[i * c + ch];
                        }
                    }
                }
            }
        }
        self.push(grid.t * h2 * w2, c, out, Op::AvgPool2 { x, grid })
    }

    /// Averages frames over the given groups; output has one frame per group.
    pub fn temporal_group(&mut self, x: Var, grid: Grid, groups: Vec<Range<usize>>) -> Var {
        let (cells, c) = self.shape(x);
        assert_eq!(cells, grid.cells());
        let plane = grid.h * grid.w * c;
        let xv = self.value(x);
        let mut out = vec![0.0; groups.len() * plane];
        for (g, range) in groups.iter().enumerate() {
            let inv = 1.0 / range.len() as f64;
            let dst = &mut out[g * plane..(g + 1) * plane];
            for f in range.clone() {
                for (d, s) in dst.iter_mut().zip(&xv[f * plane..(f + 1) * plane]) {
                    *d += s * inv;
                }
            }
        }
        let rows = groups.len() * grid.h * grid.w;
        self.push(
            rows,
            c,
            out,
            Op::TemporalGroup {
                x,
                groups,
                h: grid.h,
                w: grid.w,
            },
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(1, 1, vec![m], Op::Mean(a))
    }

    /// Mean squared error against a constant target.
    pub fn mse_const(&mut self, a: Var, target: Rc<Vec<f64>>) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), target.len(), "mse shape");
        let m = v
            .iter()
            .zip(target.iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / v.len() as f64;
        self.push(1, 1, vec![m], Op::MseConst(a, target))
    }

    /// Backpropagates from the `1×1` node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar");
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| (n.rows, n.cols)).collect(),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.value(v);
        let want = |v: Var| self.nodes[v.0].grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                // dA = G · Bᵀ, dB = Aᵀ · G
                if want(*a) {
                    let bt = transpose(val(*b), k, n);
                    let mut da = vec![0.0; m * k];
                    matmul_acc(&mut da, g, &bt, m, n, k);
                    add_into(&mut grads[a.0], &da);
                }
                if want(*b) {
                    let at = transpose(val(*a), m, k);
                    let mut db = vec![0.0; k * n];
                    matmul_acc(&mut db, &at, g, k, m, n);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Transpose(a) => {
                let gt = transpose(g, node.rows, node.cols);
                add_into(&mut grads[a.0], &gt);
            }
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], g);
                add_into(&mut grads[b.0], g);
            }
            Op::Sub(a, b) => {
                add_into(&mut grads[a.0], g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                add_into(&mut grads[b.0], &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                add_into(&mut grads[a.0], &da);
                add_into(&mut grads[b.0], &db);
            }
            Op::AddRow(a, row) => {
                add_into(&mut grads[a.0], g);
                let mut dr = vec![0.0; node.cols];
                for grow in g.chunks_exact(node.cols) {
                    dr.iter_mut().zip(grow).for_each(|(d, x)| *d += x);
                }
                add_into(&mut grads[row.0], &dr);
            }
            Op::MulRow(a, row) => {
                let c = node.cols;
                let r = val(*row);
                let da: Vec<f64> = g
                    .chunks_exact(c)
                    .flat_map(|grow| grow.iter().zip(r).map(|(g, s)| g * s))
                    .collect();
                add_into(&mut grads[a.0], &da);
                let mut dr = vec![0.0; c];
                for (grow, xrow) in g.chunks_exact(c).zip(val(*a).chunks_exact(c)) {
                    for j in 0..c {
                        dr[j] += grow[j] * xrow[j];
                    }
                }
                add_into(&mut grads[row.0], &dr);
            }
            Op::Scale(a, s) => {
                let da: Vec<f64> = g.iter().map(|x| x * s).collect();
                add_into(&mut grads[a.0], &da);
            }
            Op::AddScalar(a) => add_into(&mut grads[a.0], g),
            Op::Silu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| {
                        let s = 1.0 / (1.0 + (-x).exp());
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect();
                add_into(&mut grads[a.0], &da);
            }
            Op::Gelu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| g * gelu_grad(x))
                    .collect();
                add_into(&mut grads[a.0], &da);
            }
            Op::SoftmaxRows(a) => {
                let c = node.cols;
                let mut da = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks_exact(c).zip(node.value.chunks_exact(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    da.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - dot)));
                }
                add_into(&mut grads[a.0], &da);
            }
            Op::LayerNormRows(a, inv_std) => {
                let c = node.cols;
                let mut da = Vec::with_capacity(g.len());
                for ((grow, yrow), inv) in g
                    .chunks_exact(c)
                    .zip(node.value.chunks_exact(c))
                    .zip(inv_std)
                {
                    let gm = grow.iter().sum::<f64>() / c as f64;
                    let gy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                    da.extend(grow.iter().zip(yrow).map(|(g, y)| inv * (g - gm - y * gy)));
                }
                add_into(&mut grads[a.0], &da);
            }
            Op::RmsNormRows(a, inv_rms) => {
                let c = node.cols;
                let mut da = Vec::with_capacity(g.len());
                for ((grow, yrow), inv) in g
                    .chunks_exact(c)
                    .zip(node.value.chunks_exact(c))
                    .zip(inv_rms)
                {
                    let gy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                    da.extend(grow.iter().zip(yrow).map(|(g, y)| inv * (g - y * gy)));
                }
                add_into(&mut grads[a.0], &da);
            }
            Op::Rotary(a, table) => {
                let c = node.cols;
                let mut da = vec![0.0; g.len()];
                for row in 0..node.rows {
                    for p in 0..table.pairs {
                        let (cs, sn) =
                            (table.cos[row * table.pairs + p], table.sin[row * table.pairs + p]);
                        let (g0, g1) = (g[row * c + 2 * p], g[row * c + 2 * p + 1]);
                        da[row * c + 2 * p] = g0 * cs + g1 * sn;
                        da[row * c + 2 * p + 1] = -g0 * sn + g1 * cs;
                    }
                }
                add_into(&mut grads[a.0], &da);
            }
            Op::Cols(a, start) => {
                let (r, c) = self.shape(*a);
                let len = node.cols;
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    da[row * c + start..row * c + start + len]
                        .copy_from_slice(&g[row * len..(row + 1) * len]);
                }
                add_into(&mut grads[a.0], &da);
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    let dp: Vec<f64> = g
                        .chunks_exact(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    add_into(&mut grads[p.0], &dp);
                    offset += w;
                }
            }
            Op::Conv3d { x, w, grid } => {
                let cin = self.shape(*x).1;
                let cout = node.cols;
                let xv = val(*x);
                let wv = val(*w);
                let need_dx = want(*x);
                let mut dx = vec![0.0; if need_dx { xv.len() } else { 0 }];
                let mut dw = vec![0.0; wv.len()];
                conv3d_visit(*grid, |o, i, k| {
                    let grow = &g[o * cout..(o + 1) * cout];
                    for ci in 0..cin {
                        let r = (k * cin + ci) * cout;
                        if need_dx {
                            let wrow = &wv[r..r + cout];
                            dx[i * cin + ci] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        let xval = xv[i * cin + ci];
                        if xval != 0.0 {
                            for (d, gg) in dw[r..r + cout].iter_mut().zip(grow) {
                                *d += xval * gg;
                            }
                        }
                    }
                });
                if need_dx {
                    add_into(&mut grads[x.0], &dx);
                }
                add_into(&mut grads[w.0], &dw);
            }
            Op::AvgPool2 { x, grid } => {
                let c = node.cols;
                let (h2, w2) = (grid.h / 2, grid.w / 2);
                let mut dx = vec![0.0; grid.cells() * c];
                for t in 0..grid.t {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            let o = (t * h2 + y) * w2 + xx;
                            for (dy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let i = (t * grid.h + 2 * y + dy) * grid.w + 2 * xx + dxx;
                                for ch in 0..c {
                                    dx[i * c + ch] += 0.25 * g[o * c + ch];
                                }
                            }
                        }
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::TemporalGroup { x, groups, h, w } => {
                let c = node.cols;
                let plane = h * w * c;
                let mut dx = vec![0.0; self.shape(*x).0 * c];
                for (gi, range) in groups.iter().enumerate() {
                    let inv = 1.0 / range.len() as f64;
                    let src = &g[gi * plane..(gi + 1) * plane];
                    for f in range.clone() {
                        for (d, s) in dx[f * plane..(f + 1) * plane].iter_mut().zip(src) {
                            *d += s * inv;
                        }
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                add_into(&mut grads[a.0], &vec![g[0] / n as f64; n]);
            }
            Op::MseConst(a, target) => {
                let v = val(*a);
                let k = 2.0 * g[0] / v.len() as f64;
                let da: Vec<f64> = v.iter().zip(target.iter()).map(|(x, y)| k * (x - y)).collect();
                add_into(&mut grads[a.0], &da);
            }
        }
    }
}

/// Calls `f(out_cell, in_cell, kernel_offset)` for every in-bounds tap of a
/// 3×3×3 same-padded convolution.
fn conv3d_visit(grid: Grid, mut f: impl FnMut(usize, usize, usize)) {
    let Grid { t, h, w } = grid;
    for ot in 0..t {
        for oy in 0..h {
            for ox in 0..w {
                let o = (ot * h + oy) * w + ox;
                for kt in 0..3 {
                    let it = ot as isize + kt as isize - 1;
                    if it < 0 || it >= t as isize {
                        continue;
                    }
                    for ky in 0..3 {
                        let iy = oy as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = ox as isize + kx as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = (it as usize * h + iy as usize) * w + ix as usize;
                            f(o, i, (kt * 3 + ky) * 3 + kx);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Central-difference check of `build` (which must return a scalar)
    /// with respect to every element of every input.
    fn check(inputs: &[(usize, usize)], seed: u64, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<Vec<f64>> = inputs.iter().map(|&(r, c)| rand_vec(r * c, &mut rng)).collect();
        let eval = |vals: &[Vec<f64>]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .zip(vals)
                .map(|(&(r, c), v)| tape.leaf(r, c, v.clone()))
                .collect();
            let out = build(&mut tape, &vars);
            tape.scalar(out)
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(&values)
            .map(|(&(r, c), v)| tape.leaf(r, c, v.clone()))
            .collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (vi, var) in vars.iter().enumerate() {
            let analytic = grads.of(*var);
            for e in 0..values[vi].len() {
                let mut plus = values.clone();
                plus[vi][e] += h;
                let mut minus = values.clone();
                minus[vi][e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let denom = numeric.abs().max(analytic[e].abs()).max(1e-6);
                assert!(
                    (numeric - analytic[e]).abs() / denom < 1e-5,
                    "input {vi} elem {e}: numeric {numeric} analytic {}",
                    analytic[e]
                );
            }
        }
    }

    /// Weighted sum so every output element gets a distinct cotangent.
    fn probe(tape: &mut Tape, v: Var, seed: u64) -> Var {
        let (r, c) = tape.shape(v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let w = tape.leaf(r, c, rand_vec(r * c, &mut rng));
        let p = tape.mul(v, w);
        tape.mean(p)
    }

    #[test]
    fn grad_matmul_transpose() {
        check(&[(3, 4), (5, 4)], 1, |t, v| {
            let bt = t.transpose(v[1]);
            let y = t.matmul(v[0], bt);
            probe(t, y, 1)
        });
    }

    #[test]
    fn grad_elementwise_and_rows() {
        check(&[(3, 4), (3, 4), (1, 4)], 2, |t, v| {
            let a = t.add(v[0], v[1]);
            let b = t.sub(a, v[1]);
            let c = t.mul(b, v[1]);
            let d = t.add_row(c, v[2]);
            let e = t.mul_row(d, v[2]);
            let f = t.scale(e, 0.7);
            let g = t.add_scalar(f, 0.3);
            probe(t, g, 2)
        });
    }

    #[test]
    fn grad_activations_and_norms() {
        check(&[(4, 6)], 3, |t, v| {
            let a = t.silu(v[0]);
            let b = t.gelu(a);
            let c = t.layer_norm_rows(b, 1e-6);
            let d = t.rms_norm_rows(c, 1e-6);
            let e = t.softmax_rows(d);
            probe(t, e, 3)
        });
    }

    #[test]
    fn grad_slicing_and_rotary() {
        check(&[(3, 8)], 4, |t, v| {
            let a = t.cols(v[0], 2, 4);
            let b = t.cols(v[0], 0, 2);
            let c = t.concat_cols(&[a, b, a]);
            let table = Rc::new(RotaryTable {
                cos: (0..15).map(|i| (i as f64 * 0.3).cos()).collect(),
                sin: (0..15).map(|i| (i as f64 * 0.3).sin()).collect(),
                pairs: 5,
            });
            let d = t.rotary(c, table);
            probe(t, d, 4)
        });
    }

    #[test]
    fn grad_volumetric_ops() {
        let grid = Grid::new(5, 4, 4);
        check(&[(80, 2), (54, 3)], 5, |t, v| {
            let a = t.conv3d(v[0], v[1], grid);
            let b = t.avg_pool2(a, grid);
            let c = t.temporal_group(b, Grid::new(5, 2, 2), crate::latents::temporal_groups(5).unwrap());
            probe(t, c, 5)
        });
    }

    #[test]
    fn grad_mse() {
        check(&[(2, 3)], 6, |t, v| {
            t.mse_const(v[0], Rc::new(vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]))
        });
    }

    #[test]
    fn conv3d_matches_direct_sum() {
        // Single input/output channel; centre tap only → identity.
        let grid = Grid::new(2, 3, 3);
        let mut t = Tape::new();
        let x = t.leaf(18, 1, (0..18).map(|i| i as f64).collect());
        let mut w = vec![0.0; 27];
        w[13] = 1.0;
        let w = t.leaf(27, 1, w);
        let y = t.conv3d(x, w, grid);
        assert_eq!(t.value(y), t.value(x));
    }
}
