//! Reverse-mode tape over rank-2 tensors.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! already a topological order and [`Graph::backward`] is a single reverse
//! sweep. Graphs are built per batch and dropped afterwards.

use crate::error::{contract, Error, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{gemm_nn, gemm_tn, softmax_in_place, Tensor};

use super::params::{GradientMap, ParamId, ParameterSet};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Gelu(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Softmax(Var),
    ConcatCols(Var, Var),
    RepeatRows(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SelectCol(Var, usize),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    WeightedGather {
        table: Var,
        index: Vec<usize>,
        weight: Vec<T>,
        taps: usize,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Computation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: Vec<Option<Var>>,
}

/// Result of [`Graph::backward`]: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through one `exp`; libm's `tanhf` is several times slower and
/// this form is accurate to a few ulps.
#[inline]
fn tanh<T: Scalar>(u: T) -> T {
    let e = (-(u.abs() + u.abs())).exp();
    let t = (T::one() - e) / (T::one() + e);
    if u < T::zero() {
        -t
    } else {
        t
    }
}

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let k: T = c(GELU_K);
    let a: T = c(GELU_A);
    let half: T = c(0.5);
    half * x * (T::one() + tanh(k * (x + a * x * x * x)))
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let k: T = c(GELU_K);
    let a: T = c(GELU_A);
    let half: T = c(0.5);
    let three: T = c(3.0);
    let t = tanh(k * (x + a * x * x * x));
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * a * x * x)
}

fn shape2(t: &Tensor<impl Scalar>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn acc<'a, T: Scalar>(slot: &'a mut Option<Tensor<T>>, shape: &[usize]) -> &'a mut [T] {
    slot.get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check2(&self, op: &'static str, a: Var, b: Var, ok: bool) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            })
        }
    }

    /// Differentiable input leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Binds a learnable tensor; repeated calls return the same leaf.
    pub fn param(&mut self, params: &ParameterSet<T>, id: ParamId) -> Var {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(Op::Leaf, params.get(id).clone(), true);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.value(a));
        let (k2, n) = shape2(self.value(b));
        self.check2("matmul", a, b, k == k2)?;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.value(a));
        let (n, k2) = shape2(self.value(b));
        self.check2("matmul_bt", a, b, k == k2)?;
        let bt = self.value(b).transpose();
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), bt.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulBt(a, b), Tensor::matrix(m, n, out)?, rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let same = self.value(a).shape() == self.value(b).shape();
        self.check2(name, a, b, same)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), t, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), t, rg))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), t, rg))
    }

    /// Adds a `[1×n]` row to every row of `a[m×n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(a));
        let (r, n2) = shape2(self.value(row));
        self.check2("add_row", a, row, r == 1 && n == n2)?;
        let mut out = self.value(a).clone();
        let rv = self.value(row).data();
        for i in 0..m {
            for (o, &b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(rv) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), out, rg))
    }

    /// Scales row `i` of `a[m×n]` by `col[i]` where `col` is `[m×1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(a));
        let (m2, one) = shape2(self.value(col));
        self.check2("mul_col", a, col, m == m2 && one == 1)?;
        let mut out = self.value(a).clone();
        let cv = self.value(col).data();
        for i in 0..m {
            for o in &mut out.data_mut()[i * n..(i + 1) * n] {
                *o *= cv[i];
            }
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(Op::MulCol(a, col), out, rg))
    }

    /// Divides row `i` of `a[m×n]` by `col[i]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(a));
        let (m2, one) = shape2(self.value(col));
        self.check2("div_col", a, col, m == m2 && one == 1)?;
        let mut out = self.value(a).clone();
        let cv = self.value(col).data();
        for i in 0..m {
            for o in &mut out.data_mut()[i * n..(i + 1) * n] {
                *o /= cv[i];
            }
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(Op::DivCol(a, col), out, rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), t, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), t, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(Op::Gelu(a), t, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::exp);
        let rg = self.rg(a);
        self.push(Op::Exp(a), t, rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(Op::Square(a), t, rg)
    }

    /// Absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::abs);
        let rg = self.rg(a);
        self.push(Op::Abs(a), t, rg)
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mut t = self.value(a).clone();
        let n = t.cols();
        if n == 0 {
            return Err(contract("softmax over an empty axis"));
        }
        for row in t.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::Softmax(a), t, rg))
    }

    /// Row-wise concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = shape2(self.value(a));
        let (m2, q) = shape2(self.value(b));
        self.check2("concat_cols", a, b, m == m2)?;
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(self.value(a).row_slice(i));
            out.extend_from_slice(self.value(b).row_slice(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatCols(a, b), Tensor::matrix(m, p + q, out)?, rg))
    }

    /// Broadcasts a `[1×n]` row to `[rows×n]`.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, n) = shape2(self.value(a));
        if r != 1 {
            return Err(contract(format!("repeat_rows expects one row, got {r}")));
        }
        let row = self.value(a).data().to_vec();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(&row);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::RepeatRows(a), Tensor::matrix(rows, n, out)?, rg))
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = shape2(self.value(a));
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            if i >= m {
                return Err(contract(format!("gather_rows index {i} >= {m}")));
            }
            out.extend_from_slice(self.value(a).row_slice(i));
        }
        let rg = self.rg(a);
        let t = Tensor::matrix(index.len(), n, out)?;
        Ok(self.push(Op::GatherRows(a, index.to_vec()), t, rg))
    }

    /// `out[index[i]] += a[i]` into a zero `[rows×n]` tensor.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], rows: usize) -> Result<Var> {
        let (m, n) = shape2(self.value(a));
        if index.len() != m {
            return Err(contract(format!(
                "scatter_add_rows: {} indices for {m} rows",
                index.len()
            )));
        }
        let mut out = vec![T::zero(); rows * n];
        for (i, &dst) in index.iter().enumerate() {
            if dst >= rows {
                return Err(contract(format!("scatter_add_rows index {dst} >= {rows}")));
            }
            for (o, &v) in out[dst * n..(dst + 1) * n].iter_mut().zip(self.value(a).row_slice(i)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        let t = Tensor::matrix(rows, n, out)?;
        Ok(self.push(Op::ScatterAddRows(a, index.to_vec()), t, rg))
    }

    pub fn select_col(&mut self, a: Var, col: usize) -> Result<Var> {
        let (m, n) = shape2(self.value(a));
        if col >= n {
            return Err(contract(format!("select_col {col} >= {n}")));
        }
        let out = (0..m).map(|i| self.value(a).get(i, col)).collect();
        let rg = self.rg(a);
        Ok(self.push(Op::SelectCol(a, col), Tensor::matrix(m, 1, out)?, rg))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (m, n) = shape2(self.value(a));
        let out: Vec<T> = (0..m)
            .map(|i| self.value(a).data()[i * n..(i + 1) * n].iter().copied().sum())
            .collect();
        let rg = self.rg(a);
        self.push(Op::RowSum(a), Tensor::new(vec![m, 1], out).expect("shape"), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum::<T>() / c(t.len() as f64);
        let rg = self.rg(a);
        self.push(Op::Mean(a), Tensor::scalar(s), rg)
    }

    /// Sparse interpolation: `out[b] = Σ_t weight[b·taps+t] · table[index[b·taps+t]]`.
    pub fn weighted_gather(&mut self, table: Var, index: Vec<usize>, weight: Vec<T>, taps: usize) -> Result<Var> {
        let (v, f) = shape2(self.value(table));
        if taps == 0 || index.len() != weight.len() || index.len() % taps != 0 {
            return Err(contract("weighted_gather: index/weight length mismatch"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= v) {
            return Err(contract(format!("weighted_gather index {bad} >= {v}")));
        }
        let b = index.len() / taps;
        let mut out = vec![T::zero(); b * f];
        let tv = self.value(table);
        for row in 0..b {
            let o = &mut out[row * f..(row + 1) * f];
            for t in 0..taps {
                let w = weight[row * taps + t];
                for (x, &y) in o.iter_mut().zip(tv.row_slice(index[row * taps + t])) {
                    *x += w * y;
                }
            }
        }
        let rg = self.rg(table);
        let out = Tensor::matrix(b, f, out)?;
        Ok(self.push(
            Op::WeightedGather {
                table,
                index,
                weight,
                taps,
            },
            out,
            rg,
        ))
    }

    /// Reverse sweep from a scalar root. Accumulators are fresh on every call.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else { continue };
            self.propagate(i, g, lo);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, lo: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = shape2(val(*a));
                let n = val(*b).cols();
                if want(*a) {
                    let bt = val(*b).transpose();
                    gemm_nn(gd, bt.data(), acc(&mut lo[a.0], val(*a).shape()), m, n, k);
                }
                if want(*b) {
                    gemm_tn(val(*a).data(), gd, acc(&mut lo[b.0], val(*b).shape()), m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = shape2(val(*a));
                let n = val(*b).rows();
                if want(*a) {
                    gemm_nn(gd, val(*b).data(), acc(&mut lo[a.0], val(*a).shape()), m, n, k);
                }
                if want(*b) {
                    gemm_tn(gd, val(*a).data(), acc(&mut lo[b.0], val(*b).shape()), m, n, k);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if want(*a) {
                    for (x, &y) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd) {
                        *x += y;
                    }
                }
                if want(*b) {
                    for (x, &y) in acc(&mut lo[b.0], val(*b).shape()).iter_mut().zip(gd) {
                        if neg {
                            *x -= y;
                        } else {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let vb = val(*b).data();
                    for ((x, &y), &z) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd).zip(vb) {
                        *x += y * z;
                    }
                }
                if want(*b) {
                    let va = val(*a).data();
                    for ((x, &y), &z) in acc(&mut lo[b.0], val(*b).shape()).iter_mut().zip(gd).zip(va) {
                        *x += y * z;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let n = val(*a).cols();
                if want(*a) {
                    for (x, &y) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd) {
                        *x += y;
                    }
                }
                if want(*row) {
                    let r = acc(&mut lo[row.0], val(*row).shape());
                    for chunk in gd.chunks(n) {
                        for (x, &y) in r.iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                }
            }
            Op::MulCol(a, col) => {
                let n = val(*a).cols();
                let cv = val(*col).data();
                if want(*a) {
                    let ga = acc(&mut lo[a.0], val(*a).shape());
                    for (r, (gx, gy)) in ga.chunks_mut(n).zip(gd.chunks(n)).enumerate() {
                        for (x, &y) in gx.iter_mut().zip(gy) {
                            *x += y * cv[r];
                        }
                    }
                }
                if want(*col) {
                    let va = val(*a).data();
                    let gc = acc(&mut lo[col.0], val(*col).shape());
                    for (r, (gy, ay)) in gd.chunks(n).zip(va.chunks(n)).enumerate() {
                        gc[r] += gy.iter().zip(ay).map(|(&p, &q)| p * q).sum::<T>();
                    }
                }
            }
            Op::DivCol(a, col) => {
                let n = val(*a).cols();
                let cv = val(*col).data();
                if want(*a) {
                    let ga = acc(&mut lo[a.0], val(*a).shape());
                    for (r, (gx, gy)) in ga.chunks_mut(n).zip(gd.chunks(n)).enumerate() {
                        for (x, &y) in gx.iter_mut().zip(gy) {
                            *x += y / cv[r];
                        }
                    }
                }
                if want(*col) {
                    let va = val(*a).data();
                    let gc = acc(&mut lo[col.0], val(*col).shape());
                    for (r, (gy, ay)) in gd.chunks(n).zip(va.chunks(n)).enumerate() {
                        let s: T = gy.iter().zip(ay).map(|(&p, &q)| p * q).sum();
                        gc[r] -= s / (cv[r] * cv[r]);
                    }
                }
            }
            Op::Scale(a, s) => {
                for (x, &y) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd) {
                    *x += y * *s;
                }
            }
            Op::AddScalar(a) => {
                for (x, &y) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd) {
                    *x += y;
                }
            }
            Op::Gelu(a) => {
                let va = val(*a).data();
                for ((x, &y), &z) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd).zip(va) {
                    *x += y * gelu_grad(z);
                }
            }
            Op::Exp(a) => {
                let out = node.value.data();
                for ((x, &y), &z) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd).zip(out) {
                    *x += y * z;
                }
            }
            Op::Square(a) => {
                let two: T = c(2.0);
                let va = val(*a).data();
                for ((x, &y), &z) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd).zip(va) {
                    *x += two * y * z;
                }
            }
            Op::Abs(a) => {
                let va = val(*a).data();
                for ((x, &y), &z) in acc(&mut lo[a.0], val(*a).shape()).iter_mut().zip(gd).zip(va) {
                    if z > T::zero() {
                        *x += y;
                    } else if z < T::zero() {
                        *x -= y;
                    }
                }
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                let ga = acc(&mut lo[a.0], val(*a).shape());
                for ((gx, gy), yy) in ga.chunks_mut(n).zip(gd.chunks(n)).zip(node.value.data().chunks(n)) {
                    let dot: T = gy.iter().zip(yy).map(|(&p, &q)| p * q).sum();
                    for ((x, &gyv), &yv) in gx.iter_mut().zip(gy).zip(yy) {
                        *x += yv * (gyv - dot);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let p = val(*a).cols();
                let q = val(*b).cols();
                if want(*a) {
                    let ga = acc(&mut lo[a.0], val(*a).shape());
                    for (gx, gy) in ga.chunks_mut(p).zip(gd.chunks(p + q)) {
                        for (x, &y) in gx.iter_mut().zip(&gy[..p]) {
                            *x += y;
                        }
                    }
                }
                if want(*b) {
                    let gb = acc(&mut lo[b.0], val(*b).shape());
                    for (gx, gy) in gb.chunks_mut(q).zip(gd.chunks(p + q)) {
                        for (x, &y) in gx.iter_mut().zip(&gy[p..]) {
                            *x += y;
                        }
                    }
                }
            }
            Op::RepeatRows(a) => {
                let n = val(*a).cols();
                let ga = acc(&mut lo[a.0], val(*a).shape());
                for chunk in gd.chunks(n) {
                    for (x, &y) in ga.iter_mut().zip(chunk) {
                        *x += y;
                    }
                }
            }
            Op::GatherRows(a, index) => {
                let n = val(*a).cols();
                let ga = acc(&mut lo[a.0], val(*a).shape());
                for (r, &src) in index.iter().enumerate() {
                    for (x, &y) in ga[src * n..(src + 1) * n].iter_mut().zip(&gd[r * n..(r + 1) * n]) {
                        *x += y;
                    }
                }
            }
            Op::ScatterAddRows(a, index) => {
                let n = val(*a).cols();
                let ga = acc(&mut lo[a.0], val(*a).shape());
                for (r, &dst) in index.iter().enumerate() {
                    for (x, &y) in ga[r * n..(r + 1) * n].iter_mut().zip(&gd[dst * n..(dst + 1) * n]) {
                        *x += y;
                    }
                }
            }
            Op::SelectCol(a, col) => {
                let n = val(*a).cols();
                let ga = acc(&mut lo[a.0], val(*a).shape());
                for (r, &y) in gd.iter().enumerate() {
                    ga[r * n + col] += y;
                }
            }
            Op::RowSum(a) => {
                let n = val(*a).cols();
                let ga = acc(&mut lo[a.0], val(*a).shape());
                for (gx, &y) in ga.chunks_mut(n).zip(gd) {
                    for x in gx {
                        *x += y;
                    }
                }
            }
            Op::Sum(a) => {
                let y = gd[0];
                for x in acc(&mut lo[a.0], val(*a).shape()) {
                    *x += y;
                }
            }
            Op::Mean(a) => {
                let y = gd[0] / c(val(*a).len() as f64);
                for x in acc(&mut lo[a.0], val(*a).shape()) {
                    *x += y;
                }
            }
            Op::WeightedGather {
                table,
                index,
                weight,
                taps,
            } => {
                let f = val(*table).cols();
                let gt = acc(&mut lo[table.0], val(*table).shape());
                for (row, gy) in gd.chunks(f).enumerate() {
                    for t in 0..*taps {
                        let w = weight[row * taps + t];
                        let dst = index[row * taps + t];
                        for (x, &y) in gt[dst * f..(dst + 1) * f].iter_mut().zip(gy) {
                            *x += w * y;
                        }
                    }
                }
            }
        }
    }

    /// Collects gradients of every bound parameter; unbound ones get zeros.
    pub fn param_gradients(&self, grads: &Gradients<T>, params: &ParameterSet<T>) -> GradientMap<T> {
        let mut out = GradientMap::zeros_like(params);
        for id in params.ids() {
            if let Some(Some(v)) = self.bound.get(id.0) {
                if let Some(g) = grads.get(*v) {
                    out.grads[id.0] = g.clone();
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let v = g.input(Tensor::row(vec![0.3, -1.0, 2.0, 0.5]));
        let s = g.softmax(v).unwrap();
        let total = g.sum(s);
        let grads = g.backward(total).unwrap();
        for &d in grads.get(v).unwrap().data() {
            assert!(d.abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::<f32>::new();
        let v = g.input(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.25]]).unwrap());
        let b = g.input(Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap());
        let p = g.matmul(a, b).unwrap();
        let s = g.softmax(p).unwrap();
        let l = g.sum(s);
        let sq = g.square(l);
        let g1 = g.backward(sq).unwrap();
        let g2 = g.backward(sq).unwrap();
        assert_eq!(g1.get(a), g2.get(a));
        assert_eq!(g1.get(b), g2.get(b));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::scalar(2.0));
        let x = g.input(Tensor::scalar(1.5));
        let y = g.mul(a, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
