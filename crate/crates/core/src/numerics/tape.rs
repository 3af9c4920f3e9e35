//! Reverse-mode differentiation over [`Array2`] values.
//!
//! Every primitive records its operands and result on a [`Tape`]. A call to
//! [`Tape::backward`] walks the record in reverse and accumulates adjoints,
//! producing [`Gradients`] for every node reachable from the loss.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::array::{dot, gemm_nn, gemm_nt, gemm_tn, Array2};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x · w (+ bias)`
    Linear { x: Var, w: Var, bias: Option<Var> },
    /// `a · bᵀ`
    MatMulT { a: Var, b: Var },
    Gelu { x: Var },
    SparseMix { values: Var, cols: Vec<usize>, v: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, alpha: f64 },
    Gather { table: Var, ids: Vec<usize> },
    Reshape { x: Var },
    SelectRow { x: Var, row: usize },
    SoftmaxRows { x: Var },
    Sum { x: Var },
    Mse { pred: Var, target: Array2 },
    CrossEntropy { logits: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Array2,
    op: Op,
}

/// Record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Array2> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var) -> Array2 {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Array2::zeros(r, c)
            }
        }
    }

    pub fn take_or_zeros(&mut self, var: Var) -> Array2 {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Array2::zeros(r, c)
            }
        }
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact (erf-based) GELU, `x·Φ(x)`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
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

    pub fn value(&self, var: Var) -> &Array2 {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Array2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter. Non-finite values are rejected.
    pub fn leaf(&mut self, value: Array2) -> Result<Var> {
        value.check_finite("leaf")?;
        Ok(self.push(value, Op::Leaf))
    }

    /// `x · w + bias`, with `bias` a `1 × cols(w)` row.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            return Err(Error::shape(format!(
                "linear: input {}x{} with weight {}x{}",
                xv.rows(),
                xv.cols(),
                wv.rows(),
                wv.cols()
            )));
        }
        let (n, a, b) = (xv.rows(), xv.cols(), wv.cols());
        let mut out = Array2::zeros(n, b);
        if let Some(bias) = bias {
            let bv = self.value(bias);
            if bv.shape() != (1, b) {
                return Err(Error::shape(format!("linear: bias {}x{} for width {b}", bv.rows(), bv.cols())));
            }
            for i in 0..n {
                out.row_mut(i).copy_from_slice(bv.as_slice());
            }
        }
        gemm_nn(xv.as_slice(), wv.as_slice(), out.as_mut_slice(), n, a, b);
        Ok(self.push(out, Op::Linear { x, w, bias }))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape(format!(
                "matmul_t: {}x{} by ({}x{})ᵀ",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let mut out = Array2::zeros(av.rows(), bv.rows());
        gemm_nt(av.as_slice(), bv.as_slice(), out.as_mut_slice(), av.rows(), av.cols(), bv.rows());
        Ok(self.push(out, Op::MatMulT { a, b }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_scalar);
        self.push(out, Op::Gelu { x })
    }

    /// One sparse factor applied to `v`:
    /// `out[i] = Σ_k values[i][k] · v[cols[i·K + k]]`, accumulated in ascending `k`.
    pub fn sparse_mix(&mut self, values: Var, cols: &[usize], v: Var) -> Result<Var> {
        let (wv, vv) = (self.value(values), self.value(v));
        let (n, k) = wv.shape();
        if cols.len() != n * k {
            return Err(Error::shape(format!("sparse_mix: {} column indices for {n}x{k} values", cols.len())));
        }
        if vv.rows() != n {
            return Err(Error::shape(format!("sparse_mix: {n} factor rows but {} value rows", vv.rows())));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let out = sparse_mix_forward(wv, cols, vv);
        Ok(self.push(out, Op::SparseMix { values, cols: cols.to_vec(), v }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let out = self.value(x).scaled(alpha);
        self.push(out, Op::Scale { x, alpha })
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let mut out = Array2::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= tv.rows() {
                return Err(Error::IndexOutOfRange { index: id, len: tv.rows() });
            }
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let xv = self.value(x);
        if row >= xv.rows() {
            return Err(Error::IndexOutOfRange { index: row, len: xv.rows() });
        }
        let out = Array2::from_vec(1, xv.cols(), xv.row(row).to_vec())?;
        Ok(self.push(out, Op::SelectRow { x, row }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array2::scalar(s), Op::Sum { x })
    }

    /// Mean squared difference over all entries.
    pub fn mse(&mut self, pred: Var, target: &Array2) -> Result<Var> {
        let pv = self.value(pred);
        pv.same_shape(target, "mse")?;
        let n = pv.len().max(1) as f64;
        let s: f64 = pv.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t) * (p - t)).sum();
        Ok(self.push(Array2::scalar(s / n), Op::Mse { pred, target: target.clone() }))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, max-shifted.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, classes) = lv.shape();
        if labels.len() != n {
            return Err(Error::shape(format!("cross_entropy: {} labels for {n} rows", labels.len())));
        }
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::Label { label, classes });
            }
            let row = lv.row(i);
            total += log_sum_exp(row) - row[label];
        }
        let loss = total / n.max(1) as f64;
        Ok(self.push(Array2::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec() }))
    }

    /// Reverse pass from a scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NotScalar { rows: lv.rows(), cols: lv.cols() });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Array2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { x, w, bias } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, a, b) = (xv.rows(), xv.cols(), wv.cols());
                    let mut dx = Array2::zeros(n, a);
                    gemm_nt(g.as_slice(), wv.as_slice(), dx.as_mut_slice(), n, b, a);
                    let mut dw = Array2::zeros(a, b);
                    gemm_tn(xv.as_slice(), g.as_slice(), dw.as_mut_slice(), n, a, b);
                    if let Some(bias) = bias {
                        let mut db = Array2::zeros(1, b);
                        for row in g.rows_iter() {
                            for (d, v) in db.as_mut_slice().iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::MatMulT { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, m, k) = (av.rows(), av.cols(), bv.rows());
                    // out = a·bᵀ: da = g·b, db = gᵀ·a
                    let mut da = Array2::zeros(n, m);
                    gemm_nn(g.as_slice(), bv.as_slice(), da.as_mut_slice(), n, k, m);
                    let mut db = Array2::zeros(k, m);
                    gemm_tn(g.as_slice(), av.as_slice(), db.as_mut_slice(), n, k, m);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        *d *= normal_cdf(v) + v * normal_pdf(v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SparseMix { values, cols, v } => {
                    let (wv, vv) = (self.value(*values), self.value(*v));
                    let (n, k) = wv.shape();
                    let mut dw = Array2::zeros(n, k);
                    let mut dv = Array2::zeros(vv.rows(), vv.cols());
                    for i in 0..n {
                        let g_row = g.row(i);
                        for t in 0..k {
                            let c = cols[i * k + t];
                            dw[(i, t)] = dot(g_row, vv.row(c));
                            let coef = wv[(i, t)];
                            for (d, gv) in dv.row_mut(c).iter_mut().zip(g_row) {
                                *d += coef * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *values, dw);
                    accumulate(&mut grads, *v, dv);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale { x, alpha } => {
                    let dx = g.scaled(*alpha);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let mut dt = Array2::zeros(tv.rows(), tv.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, gv) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::Reshape { x } => {
                    let (r, c) = self.value(*x).shape();
                    let dx = Array2::from_vec(r, c, g.into_vec())?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::SelectRow { x, row } => {
                    let (r, c) = self.value(*x).shape();
                    let mut dx = Array2::zeros(r, c);
                    dx.row_mut(*row).copy_from_slice(g.as_slice());
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows { x } => {
                    let y = &node.value;
                    let mut dx = g;
                    for i in 0..y.rows() {
                        let y_row = y.row(i);
                        let s = dot(dx.row(i), y_row);
                        for (d, yv) in dx.row_mut(i).iter_mut().zip(y_row) {
                            *d = yv * (*d - s);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum { x } => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Array2::filled(r, c, g[(0, 0)]));
                }
                Op::Mse { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g[(0, 0)] / pv.len().max(1) as f64;
                    let dp = Array2::from_vec(
                        pv.rows(),
                        pv.cols(),
                        pv.as_slice().iter().zip(target.as_slice()).map(|(p, t)| scale * (p - t)).collect(),
                    )?;
                    accumulate(&mut grads, *pred, dp);
                }
                Op::CrossEntropy { logits, labels } => {
                    let lv = self.value(*logits);
                    let scale = g[(0, 0)] / labels.len().max(1) as f64;
                    let mut dl = lv.clone();
                    for (i, &label) in labels.iter().enumerate() {
                        let row = dl.row_mut(i);
                        softmax_in_place(row);
                        row[label] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Array2>], var: Var, delta: Array2) {
    match &mut grads[var.0] {
        Some(g) => {
            for (a, b) in g.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn sparse_mix_forward(values: &Array2, cols: &[usize], v: &Array2) -> Array2 {
    let (n, k) = values.shape();
    let mut out = Array2::zeros(n, v.cols());
    for i in 0..n {
        let w_row = values.row(i);
        let out_row = out.row_mut(i);
        for t in 0..k {
            let coef = w_row[t];
            for (o, x) in out_row.iter_mut().zip(v.row(cols[i * k + t])) {
                *o += coef * x;
            }
        }
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
