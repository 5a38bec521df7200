//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a tape built during one forward pass. Parameters are
//! referenced by index into a [`ParamSet`] rather than copied, and
//! [`Graph::backward`] returns gradients keyed by the same indices.

use super::params::{Grads, ParamSet};
use super::tensor::{gemm, Mat, Real, View, ViewMut};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value<T> {
    Owned(Mat<T>),
    Param(usize),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Silu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    /// Per-row standardization; stores the reciprocal standard deviations.
    LayerNorm(Var, Vec<T>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    BroadcastRows(Var),
    MeanRows(Var),
    Mean(Var),
    MseLoss(Var, Mat<T>),
    /// Multi-head scaled dot-product attention; stores the attention weights
    /// per head, each `nq × nk`.
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Mat<T>>,
    },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<T: Real>(x: T) -> T {
    let c = T::c(GELU_C);
    let inner = c * (x + T::c(0.044715) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::c(GELU_C);
    let x2 = x * x;
    let inner = c * (x + T::c(0.044715) * x2 * x);
    let th = inner.tanh();
    let dinner = c * (T::one() + T::c(3.0 * 0.044715) * x2);
    T::c(0.5) * (T::one() + th) + T::c(0.5) * x * (T::one() - th * th) * dinner
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn softmax_rows_in_place<T: Real>(m: &mut Mat<T>) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        let inv = T::one() / s;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

fn col_sum<T: Real>(m: &Mat<T>) -> Mat<T> {
    let mut out = Mat::zeros(1, m.cols);
    for r in 0..m.rows {
        for (o, &v) in out.data.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(i) => self.params.tensor(*i),
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient is reported for it).
    pub fn constant(&mut self, m: Mat<T>) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(am.rows, bm.rows);
        gemm(T::one(), View::of(am), View::of(bm).t(), T::zero(), ViewMut::of(&mut out));
        self.push(out, Op::MatMulNt(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Mat<T> {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "elementwise shape mismatch");
        Mat::from_vec(
            am.rows,
            am.cols,
            am.data.iter().zip(&bm.data).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1×cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!((1, am.cols), rm.shape(), "add_row shape mismatch");
        let mut out = am.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&rm.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1×cols` row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!((1, am.cols), rm.shape(), "mul_row shape mismatch");
        let mut out = am.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&rm.data) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        softmax_rows_in_place(&mut out);
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Standardizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let n = T::c(am.cols as f64);
        let eps = T::c(1e-5);
        let mut out = am.clone();
        let mut inv_std = Vec::with_capacity(am.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm(a, inv_std))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let am = self.value(a);
        assert!(start + len <= am.rows, "slice_rows out of range");
        let out = Mat::from_vec(
            len,
            am.cols,
            am.data[start * am.cols..(start + len) * am.cols].to_vec(),
        );
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let am = self.value(a);
        assert!(start + len <= am.cols, "slice_cols out of range");
        let out = Mat::from_fn(am.rows, len, |r, c| am.at(r, start + c));
        self.push(out, Op::SliceCols(a, start))
    }

    /// Repeats a `1×cols` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let am = self.value(a);
        assert_eq!(am.rows, 1, "broadcast_rows expects a single row");
        let mut data = Vec::with_capacity(n * am.cols);
        for _ in 0..n {
            data.extend_from_slice(&am.data);
        }
        let out = Mat::from_vec(n, am.cols, data);
        self.push(out, Op::BroadcastRows(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut out = col_sum(am);
        out.scale_assign(T::one() / T::c(am.rows as f64));
        self.push(out, Op::MeanRows(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let s = am.data.iter().copied().sum::<T>() / T::c(am.len() as f64);
        self.push(Mat::filled(1, 1, s), Op::Mean(a))
    }

    /// Mean squared error against a constant target, as a `1×1` node.
    pub fn mse(&mut self, a: Var, target: Mat<T>) -> Var {
        let am = self.value(a);
        assert_eq!(am.shape(), target.shape(), "mse shape mismatch");
        let s = am
            .data
            .iter()
            .zip(&target.data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / T::c(am.len() as f64);
        self.push(Mat::filled(1, 1, s), Op::MseLoss(a, target))
    }

    /// Multi-head scaled dot-product attention. `q` is `nq×d`, `k` and `v`
    /// are `nk×d`; heads split the `d` columns evenly. Softmax runs over keys,
    /// so the result does not depend on the order of key/value rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols;
        assert_eq!(km.cols, d, "attention key width mismatch");
        assert_eq!(vm.cols, d, "attention value width mismatch");
        assert_eq!(km.rows, vm.rows, "attention key/value count mismatch");
        assert_eq!(d % heads, 0, "attention width not divisible by heads");
        let hd = d / heads;
        let scale = T::one() / T::c(hd as f64).sqrt();
        let mut out = Mat::zeros(qm.rows, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut p = Mat::zeros(qm.rows, km.rows);
            gemm(
                scale,
                View::cols(qm, h * hd, hd),
                View::cols(km, h * hd, hd).t(),
                T::zero(),
                ViewMut::of(&mut p),
            );
            softmax_rows_in_place(&mut p);
            gemm(
                T::one(),
                View::of(&p),
                View::cols(vm, h * hd, hd),
                T::zero(),
                ViewMut::cols(&mut out, h * hd, hd),
            );
            probs.push(p);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Back-propagates from a scalar (`1×1`) node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, T::one()));

        fn acc<T: Real>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(am.rows, am.cols);
                    gemm(T::one(), View::of(&g), View::of(bm).t(), T::zero(), ViewMut::of(&mut ga));
                    let mut gb = Mat::zeros(bm.rows, bm.cols);
                    gemm(T::one(), View::of(am).t(), View::of(&g), T::zero(), ViewMut::of(&mut gb));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(am.rows, am.cols);
                    gemm(T::one(), View::of(&g), View::of(bm), T::zero(), ViewMut::of(&mut ga));
                    let mut gb = Mat::zeros(bm.rows, bm.cols);
                    gemm(T::one(), View::of(&g).t(), View::of(am), T::zero(), ViewMut::of(&mut gb));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = Mat::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&bm.data).map(|(&x, &y)| x * y).collect(),
                    );
                    let gb = Mat::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&am.data).map(|(&x, &y)| x * y).collect(),
                    );
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, col_sum(&g));
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (am, rm) = (self.value(*a), self.value(*row));
                    let mut grow = Mat::zeros(1, am.cols);
                    let mut ga = g.clone();
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            grow.data[c] += g.at(r, c) * am.at(r, c);
                            *ga.at_mut(r, c) *= rm.data[c];
                        }
                    }
                    acc(&mut grads, *row, grow);
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Gelu(a) => {
                    let am = self.value(*a);
                    let ga = Mat::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&am.data).map(|(&d, &x)| d * gelu_grad(x)).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let am = self.value(*a);
                    let ga = Mat::from_vec(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&am.data)
                            .map(|(&d, &x)| {
                                let s = sigmoid(x);
                                d * (s + x * s * (T::one() - s))
                            })
                            .collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    let ga = Mat::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&y.data).map(|(&d, &t)| d * (T::one() - t * t)).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(i));
                    let mut ga = g.clone();
                    for r in 0..g.rows {
                        let dot: T = g.row(r).iter().zip(y.row(r)).map(|(&d, &p)| d * p).sum();
                        for (o, &p) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o = p * (*o - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = self.value(Var(i));
                    let n = T::c(g.cols as f64);
                    let mut ga = g.clone();
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mg = gr.iter().copied().sum::<T>() / n;
                        let mgy = gr.iter().zip(yr).map(|(&d, &v)| d * v).sum::<T>() / n;
                        let is = inv_std[r];
                        for ((o, &d), &v) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = is * (d - mg - v * mgy);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let rows = self.value(p).rows;
                        let part = Mat::from_vec(
                            rows,
                            g.cols,
                            g.data[off * g.cols..(off + rows) * g.cols].to_vec(),
                        );
                        off += rows;
                        acc(&mut grads, p, part);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let part = Mat::from_fn(g.rows, cols, |r, c| g.at(r, off + c));
                        off += cols;
                        acc(&mut grads, p, part);
                    }
                }
                Op::SliceRows(a, start) => {
                    let am = self.value(*a);
                    let mut ga = Mat::zeros(am.rows, am.cols);
                    ga.data[start * am.cols..(start + g.rows) * am.cols].copy_from_slice(&g.data);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let am = self.value(*a);
                    let mut ga = Mat::zeros(am.rows, am.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    acc(&mut grads, *a, col_sum(&g));
                }
                Op::MeanRows(a) => {
                    let am = self.value(*a);
                    let inv = T::one() / T::c(am.rows as f64);
                    let mut ga = Mat::zeros(am.rows, am.cols);
                    for r in 0..am.rows {
                        for (o, &d) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o = d * inv;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let am = self.value(*a);
                    let v = g.data[0] / T::c(am.len() as f64);
                    acc(&mut grads, *a, Mat::filled(am.rows, am.cols, v));
                }
                Op::MseLoss(a, target) => {
                    let am = self.value(*a);
                    let k = T::c(2.0) * g.data[0] / T::c(am.len() as f64);
                    let ga = Mat::from_vec(
                        am.rows,
                        am.cols,
                        am.data.iter().zip(&target.data).map(|(&x, &y)| k * (x - y)).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qm.cols;
                    let hd = d / heads;
                    let scale = T::one() / T::c(hd as f64).sqrt();
                    let mut gq = Mat::zeros(qm.rows, d);
                    let mut gk = Mat::zeros(km.rows, d);
                    let mut gv = Mat::zeros(vm.rows, d);
                    for (h, p) in probs.iter().enumerate() {
                        let cols = h * hd;
                        // dP = dO · Vᵀ
                        let mut dp = Mat::zeros(p.rows, p.cols);
                        gemm(
                            T::one(),
                            View::cols(&g, cols, hd),
                            View::cols(vm, cols, hd).t(),
                            T::zero(),
                            ViewMut::of(&mut dp),
                        );
                        // dV = Pᵀ · dO
                        gemm(
                            T::one(),
                            View::of(p).t(),
                            View::cols(&g, cols, hd),
                            T::zero(),
                            ViewMut::cols(&mut gv, cols, hd),
                        );
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                        for r in 0..p.rows {
                            let pr = p.row(r);
                            let dot: T = dp.row(r).iter().zip(pr).map(|(&a, &b)| a * b).sum();
                            for (o, &pv) in dp.row_mut(r).iter_mut().zip(pr) {
                                *o = pv * (*o - dot);
                            }
                        }
                        gemm(
                            scale,
                            View::of(&dp),
                            View::cols(km, cols, hd),
                            T::zero(),
                            ViewMut::cols(&mut gq, cols, hd),
                        );
                        gemm(
                            scale,
                            View::of(&dp).t(),
                            View::cols(qm, cols, hd),
                            T::zero(),
                            ViewMut::cols(&mut gk, cols, hd),
                        );
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
            }
        }

        let mut out = Grads::zeros_like(self.params);
        for (id, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = grads[v.0].take() {
                    out.tensors[id] = g;
                }
            }
        }
        out
    }
}
