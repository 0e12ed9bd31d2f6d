//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation eagerly (values are computed at
//! construction time) and [`Graph::backward`] walks the tape in reverse,
//! accumulating exact analytic gradients for every [`ParamId`] that was read
//! into the graph. The op set is exactly what the encoder, both branch heads
//! and the losses need.

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::{interp_plan, Matrix, Real};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Edge handling for the width-3 temporal convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Replicate,
    Circular,
}

impl Padding {
    #[inline]
    fn index(self, t: isize, len: usize) -> usize {
        let len_i = len as isize;
        match self {
            Padding::Replicate => t.clamp(0, len_i - 1) as usize,
            Padding::Circular => t.rem_euclid(len_i) as usize,
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, T, T),
    Pow(Var, T),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    NormalizeRows(Var, Vec<T>),
    AvgPool2(Var),
    DwConv3(Var, Var, Padding),
    Upsample(Var),
    TopKMeanCols(Var, Vec<Vec<usize>>),
    SelectCol(Var, usize),
    Mean(Var),
    Sum(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalarVar(..) => "mul_scalar_var",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Clamp(..) => "clamp",
            Op::Pow(..) => "pow",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::AvgPool2(..) => "avg_pool2",
            Op::DwConv3(..) => "dwconv3",
            Op::Upsample(..) => "upsample",
            Op::TopKMeanCols(..) => "topk_mean_cols",
            Op::SelectCol(..) => "select_col",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Eager tape of matrix operations.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    non_finite: Option<&'static str>,
    zero_norm_rows: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            non_finite: None,
            zero_norm_rows: 0,
        }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of zero-norm rows seen by [`Graph::normalize_rows`]; such rows
    /// normalize to the zero vector.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    /// Name of the first op whose output contained NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.non_finite
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some(op) => Err(Error::NonFinite { op: op.to_string() }),
            None => Ok(()),
        }
    }

    pub fn input(&mut self, m: Matrix<T>) -> Var {
        self.push(m, Op::Input)
    }

    pub fn constant_scalar(&mut self, v: T) -> Var {
        self.input(Matrix::scalar(v))
    }

    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        self.push(params.get(id).as_matrix(), Op::Param(id))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::shape("matmul", format!("{ar}x{ac} · {br}x{bc}")));
        }
        let v = self.value(a).matmul(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != bc {
            return Err(Error::shape(
                "matmul_bt",
                format!("{ar}x{ac} · ({br}x{bc})ᵀ"),
            ));
        }
        let v = self.value(a).matmul_bt(self.value(b));
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Matrix<T> {
        let (va, vb) = (self.value(a), self.value(b));
        Matrix::from_vec(
            va.rows(),
            va.cols(),
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(bias) != (1, c) {
            return Err(Error::shape(
                "add_row_bias",
                format!("{r}x{c} + {:?}", self.shape(bias)),
            ));
        }
        let mut v = self.value(x).clone();
        let b = self.value(bias).row(0).to_vec();
        for i in 0..r {
            for (o, &bb) in v.row_mut(i).iter_mut().zip(&b) {
                *o = *o + bb;
            }
        }
        Ok(self.push(v, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a + s);
        self.push(v, Op::AddScalar(x))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -T::one());
        self.add_scalar(neg, T::one())
    }

    /// Multiplies every entry of `x` by the `1×1` value `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::shape(
                "mul_scalar_var",
                format!("{:?}", self.shape(s)),
            ));
        }
        let k = self.scalar(s);
        let v = self.value(x).map(|a| a * k);
        Ok(self.push(v, Op::MulScalarVar(x, s)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .map(|a| if a > T::zero() { a } else { T::zero() });
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(super::tensor::sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(T::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(T::ln);
        self.push(v, Op::Log(x))
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let v = self.value(x).map(|a| a.max(lo).min(hi));
        self.push(v, Op::Clamp(x, lo, hi))
    }

    /// Elementwise `x^p` for positive `x`.
    pub fn pow(&mut self, x: Var, p: T) -> Var {
        let v = self.value(x).map(|a| a.powf(p));
        self.push(v, Op::Pow(x, p))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut v = Matrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            v.row_mut(r)
                .copy_from_slice(&super::tensor::softmax(src.row(r)));
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut v = Matrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            let row = src.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&a| (a - max).exp()).sum::<T>().ln();
            for (o, &a) in v.row_mut(r).iter_mut().zip(row) {
                *o = a - lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(x))
    }

    /// Scales each row to unit Euclidean norm. Zero rows stay zero and are
    /// counted in [`Graph::zero_norm_rows`].
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut v = src.clone();
        let mut norms = Vec::with_capacity(src.rows());
        let mut zero_rows = 0;
        for r in 0..src.rows() {
            let norm = src.row(r).iter().map(|&a| a * a).sum::<T>().sqrt();
            norms.push(norm);
            if norm > T::zero() {
                v.row_mut(r).iter_mut().for_each(|a| *a = *a / norm);
            } else {
                zero_rows += 1;
            }
        }
        self.zero_norm_rows += zero_rows;
        self.push(v, Op::NormalizeRows(x, norms))
    }

    /// Mean of consecutive row pairs; `t` must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (t, c) = self.shape(x);
        if t % 2 != 0 {
            return Err(Error::shape("avg_pool2", format!("odd length {t}")));
        }
        let src = self.value(x);
        let half = T::lit(0.5);
        let mut v = Matrix::zeros(t / 2, c);
        for r in 0..t / 2 {
            for j in 0..c {
                v.set(r, j, (src.get(2 * r, j) + src.get(2 * r + 1, j)) * half);
            }
        }
        Ok(self.push(v, Op::AvgPool2(x)))
    }

    /// Depthwise width-3 temporal convolution: `out[t][c] = Σ_k K[k][c] · x[t+k-1][c]`
    /// with `kernel` of shape `3×c`.
    pub fn dwconv3(&mut self, x: Var, kernel: Var, pad: Padding) -> Result<Var> {
        let (t, c) = self.shape(x);
        if self.shape(kernel) != (3, c) {
            return Err(Error::shape(
                "dwconv3",
                format!("input {t}x{c}, kernel {:?}", self.shape(kernel)),
            ));
        }
        let (src, k) = (self.value(x), self.value(kernel));
        let mut v = Matrix::zeros(t, c);
        for r in 0..t {
            for tap in 0..3 {
                let idx = pad.index(r as isize + tap as isize - 1, t);
                for j in 0..c {
                    let cur = v.get(r, j);
                    v.set(r, j, cur + k.get(tap, j) * src.get(idx, j));
                }
            }
        }
        Ok(self.push(v, Op::DwConv3(x, kernel, pad)))
    }

    /// Linear interpolation along rows to `n` rows, endpoints pinned.
    pub fn upsample(&mut self, x: Var, n: usize) -> Var {
        let v = super::tensor::interpolate_rows(self.value(x), n);
        self.push(v, Op::Upsample(x))
    }

    /// Per column, the mean of the `k` largest entries (ties broken by lower
    /// row index). Output is `1×c`.
    pub fn topk_mean_cols(&mut self, x: Var, k: usize) -> Result<Var> {
        let (t, c) = self.shape(x);
        if k == 0 || k > t {
            return Err(Error::shape(
                "topk_mean_cols",
                format!("k={k} with {t} rows"),
            ));
        }
        let src = self.value(x);
        let mut v = Matrix::zeros(1, c);
        let mut selected = Vec::with_capacity(c);
        let kf = T::from_usize(k).expect("k");
        for j in 0..c {
            let col = src.col_vec(j);
            let idx = top_k_indices(&col, k);
            let total: T = idx.iter().map(|&i| col[i]).sum();
            v.set(0, j, total / kf);
            selected.push(idx);
        }
        Ok(self.push(v, Op::TopKMeanCols(x, selected)))
    }

    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var> {
        let (t, c) = self.shape(x);
        if col >= c {
            return Err(Error::shape("select_col", format!("column {col} of {c}")));
        }
        let v = Matrix::column(self.value(x).col_vec(col));
        debug_assert_eq!(v.rows(), t);
        Ok(self.push(v, Op::SelectCol(x, col)))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = T::from_usize(src.data().len()).expect("len");
        let v = Matrix::scalar(src.data().iter().copied().sum::<T>() / n);
        self.push(v, Op::Mean(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::scalar(self.value(x).data().iter().copied().sum::<T>());
        self.push(v, Op::Sum(x))
    }

    /// Arithmetic mean of same-shaped vars.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::shape("mean_of", "empty input"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(self.scale(acc, T::one() / T::from_usize(xs.len()).expect("len")))
    }

    /// Reverse pass from the scalar `loss`. Returns gradients indexed like
    /// `params`; fails if any forward value was non-finite.
    pub fn backward(&self, loss: Var, num_params: usize) -> Result<Gradients<T>> {
        self.check_finite()?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        let mut out = Gradients::empty(num_params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = &mut out.0[id.0];
                    match slot {
                        Some(acc) => {
                            for (a, &b) in acc.iter_mut().zip(g.data()) {
                                *a = *a + b;
                            }
                        }
                        None => *slot = Some(g.into_vec()),
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_at(self.value(*a));
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *b, g.clone());
                    accum(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *b, g.map(|x| -x));
                    accum(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = hadamard(&g, self.value(*b));
                    let db = hadamard(&g, self.value(*a));
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::AddRowBias(x, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                    accum(&mut grads, *bias, db);
                    accum(&mut grads, *x, g);
                }
                Op::Scale(x, s) => accum(&mut grads, *x, g.map(|v| v * *s)),
                Op::AddScalar(x) => accum(&mut grads, *x, g),
                Op::MulScalarVar(x, s) => {
                    let k = self.scalar(*s);
                    let ds: T = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&a, &b)| a * b)
                        .sum();
                    accum(&mut grads, *s, Matrix::scalar(ds));
                    accum(&mut grads, *x, g.map(|v| v * k));
                }
                Op::Relu(x) => {
                    let dx = zip_map(&g, self.value(*x), |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    accum(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = zip_map(&g, y, |gv, yv| gv * yv * (T::one() - yv));
                    accum(&mut grads, *x, dx);
                }
                Op::Exp(x) => accum(&mut grads, *x, hadamard(&g, y)),
                Op::Log(x) => {
                    let dx = zip_map(&g, self.value(*x), |gv, xv| gv / xv);
                    accum(&mut grads, *x, dx);
                }
                Op::Clamp(x, lo, hi) => {
                    let dx = zip_map(&g, self.value(*x), |gv, xv| {
                        if xv >= *lo && xv <= *hi {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    accum(&mut grads, *x, dx);
                }
                Op::Pow(x, p) => {
                    let p = *p;
                    let dx = zip_map(&g, self.value(*x), |gv, xv| {
                        if p == T::zero() {
                            T::zero()
                        } else {
                            gv * p * xv.powf(p - T::one())
                        }
                    });
                    accum(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let mut dx = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::LogSoftmaxRows(x) => {
                    let mut dx = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let total: T = gr.iter().copied().sum();
                        for ((o, &gv), &yv) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = gv - yv.exp() * total;
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::NormalizeRows(x, norms) => {
                    let mut dx = Matrix::zeros(g.rows(), g.cols());
                    for (r, &norm) in norms.iter().enumerate() {
                        if norm <= T::zero() {
                            continue;
                        }
                        let (gr, yr) = (g.row(r), y.row(r));
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = (gv - yv * dot) / norm;
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::AvgPool2(x) => {
                    let half = T::lit(0.5);
                    let mut dx = Matrix::zeros(g.rows() * 2, g.cols());
                    for r in 0..g.rows() {
                        for j in 0..g.cols() {
                            let v = g.get(r, j) * half;
                            dx.set(2 * r, j, v);
                            dx.set(2 * r + 1, j, v);
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::DwConv3(x, kernel, pad) => {
                    let (src, k) = (self.value(*x), self.value(*kernel));
                    let t = src.rows();
                    let mut dx = Matrix::zeros(t, src.cols());
                    let mut dk = Matrix::zeros(3, src.cols());
                    for r in 0..t {
                        for tap in 0..3 {
                            let i = pad.index(r as isize + tap as isize - 1, t);
                            for j in 0..src.cols() {
                                let gv = g.get(r, j);
                                dx.set(i, j, dx.get(i, j) + k.get(tap, j) * gv);
                                dk.set(tap, j, dk.get(tap, j) + src.get(i, j) * gv);
                            }
                        }
                    }
                    accum(&mut grads, *kernel, dk);
                    accum(&mut grads, *x, dx);
                }
                Op::Upsample(x) => {
                    let t_in = self.value(*x).rows();
                    let plan = interp_plan(t_in, g.rows());
                    let mut dx = Matrix::zeros(t_in, g.cols());
                    for (r, &(lo, hi, frac)) in plan.iter().enumerate() {
                        let f = T::lit(frac);
                        for j in 0..g.cols() {
                            let gv = g.get(r, j);
                            dx.set(lo, j, dx.get(lo, j) + (T::one() - f) * gv);
                            dx.set(hi, j, dx.get(hi, j) + f * gv);
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::TopKMeanCols(x, selected) => {
                    let (t, c) = self.shape(*x);
                    let mut dx = Matrix::zeros(t, c);
                    for (j, idx) in selected.iter().enumerate() {
                        let share = g.get(0, j) / T::from_usize(idx.len()).expect("k");
                        for &i in idx {
                            dx.set(i, j, dx.get(i, j) + share);
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::SelectCol(x, col) => {
                    let (t, c) = self.shape(*x);
                    let mut dx = Matrix::zeros(t, c);
                    for r in 0..t {
                        dx.set(r, *col, g.get(r, 0));
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::Mean(x) => {
                    let (r, c) = self.shape(*x);
                    let share = g.get(0, 0) / T::from_usize(r * c).expect("len");
                    accum(&mut grads, *x, Matrix::filled(r, c, share));
                }
                Op::Sum(x) => {
                    let (r, c) = self.shape(*x);
                    accum(&mut grads, *x, Matrix::filled(r, c, g.get(0, 0)));
                }
            }
        }
        for g in out.0.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: "backward".to_string(),
                });
            }
        }
        Ok(out)
    }
}

fn accum<T: Real>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn hadamard<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map<T: Real>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

/// Indices of the `k` largest values, ties resolved toward the lower index.
pub fn top_k_indices<T: Real>(values: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order.truncate(k);
    order
}
