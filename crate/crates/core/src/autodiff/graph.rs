//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D matrix; vectors are `1 x n` rows and batched
//! vectors are `batch x n`. Nodes are appended in evaluation order, so the
//! insertion order is already a topological order and [`Graph::backward`]
//! walks it in reverse.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Surrogate Jacobians that a [`Graph::custom_grad`] node can apply in
/// place of the true derivative of its forward map.
#[derive(Clone, Debug)]
pub enum BackwardRule {
    /// Upstream gradient passes through unchanged.
    Identity,
    /// Row-wise softmax Jacobian evaluated at the given logits.
    SoftmaxJacobianAt(Matrix),
}

impl BackwardRule {
    pub const NAMES: [&'static str; 3] = [
        "identity-passthrough",
        "softmax-jacobian-at(z)",
        "softmax-jacobian-at(z~)",
    ];

    /// Resolves a rule by name. `at` supplies the logits for the softmax
    /// rules (`z` or `z + g`, whichever the caller means).
    pub fn from_name(name: &str, at: &Matrix) -> Result<Self> {
        match name {
            "identity-passthrough" | "identity" => Ok(BackwardRule::Identity),
            "softmax-jacobian-at(z)" | "softmax-jacobian-at(z~)" | "softmax-jacobian" => {
                Ok(BackwardRule::SoftmaxJacobianAt(at.clone()))
            }
            other => Err(Error::UnknownRule(other.to_string())),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Matrix),
    MulCol(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Dropout(Var, Matrix),
    Custom(Var, BackwardRule),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` if nothing flowed there.
    pub fn get_or_zeros(&self, v: Var, like: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// An append-only tape. Single-threaded; separate graphs are independent.
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
    consumed: bool,
}

pub(crate) fn softmax_row_values(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub(crate) fn log_softmax_row_values(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// `J^T u` for the row-wise softmax Jacobian `diag(q) - q q^T` at `z`.
pub(crate) fn softmax_jacobian_apply(z: &Matrix, upstream: &Matrix) -> Matrix {
    let q = softmax_row_values(z);
    softmax_jacobian_apply_q(&q, upstream)
}

fn softmax_jacobian_apply_q(q: &Matrix, upstream: &Matrix) -> Matrix {
    let dots = (q * upstream).sum_axis(Axis(1));
    let mut out = upstream.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let d = dots[i];
        Zip::from(&mut row)
            .and(q.row(i))
            .for_each(|o, &qv| *o = qv * (*o - d));
    }
    out
}

impl Graph {
    /// Graph in evaluation mode: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            consumed: false,
        }
    }

    /// Graph in training mode; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            consumed: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: sa,
                right: sr,
            });
        }
        let value = self.value(a) + self.value(row);
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Multiplies row `i` of `a` by the constant `factors[i, 0]`.
    pub fn scale_rows(&mut self, a: Var, factors: Matrix) -> Result<Var> {
        let sa = self.shape(a);
        if factors.dim() != (sa.0, 1) {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                left: sa,
                right: factors.dim(),
            });
        }
        let value = self.value(a) * &factors;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::ScaleRows(a, factors), rg))
    }

    /// `col[i] * m[i, :]` for a `b x 1` column and a `b x n` matrix.
    pub fn mul_col(&mut self, col: Var, m: Var) -> Result<Var> {
        let (sc, sm) = (self.shape(col), self.shape(m));
        if sc != (sm.0, 1) {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                left: sc,
                right: sm,
            });
        }
        let value = self.value(m) * self.value(col);
        let rg = self.rg(&[col, m]);
        Ok(self.push(value, Op::MulCol(col, m), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start >= end || end > sa.1 {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: sa,
                right: (start, end),
            });
        }
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Row `i` of the result is row `indices[i]` of `a` (embedding lookup,
    /// beam reordering).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= sa.0) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: sa,
                right: (bad, 0),
            });
        }
        let value = self.value(a).select(Axis(0), indices);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_row_values(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_row_values(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_elem((1, 1), m.sum() / m.len() as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Row sums as a `b x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Row-wise dot product of two `b x n` matrices, as `b x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum_cols(p))
    }

    /// Inverted dropout; the identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let dim = self.shape(a);
        let rng = &mut self.rng;
        let mask = Matrix::from_shape_fn(dim, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let value = self.value(a) * &mask;
        let rg = self.rg(&[a]);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    /// Node whose forward value is `forward_value` and whose backward pass
    /// maps the upstream gradient onto `input` through `rule`, regardless of
    /// how `forward_value` was computed.
    pub fn custom_grad(
        &mut self,
        forward_value: Matrix,
        input: Var,
        rule: BackwardRule,
    ) -> Result<Var> {
        let si = self.shape(input);
        if forward_value.dim() != si {
            return Err(Error::ShapeMismatch {
                op: "custom_grad",
                left: forward_value.dim(),
                right: si,
            });
        }
        if let BackwardRule::SoftmaxJacobianAt(at) = &rule {
            if at.dim() != si {
                return Err(Error::ShapeMismatch {
                    op: "custom_grad",
                    left: at.dim(),
                    right: si,
                });
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(forward_value, Op::Custom(input, rule), rg))
    }

    /// Reverse sweep from a `1 x 1` node. A tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let sl = self.shape(loss);
        if sl != (1, 1) {
            return Err(Error::NotScalar {
                op: "backward",
                shape: sl,
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.dot(&val(*b).t()));
                }
                if wants(*b) {
                    accumulate(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g * val(*b));
                }
                if wants(*b) {
                    accumulate(grads, *b, g * val(*a));
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*row) {
                    accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, f) => accumulate(grads, *a, g * *f),
            Op::ScaleRows(a, factors) => accumulate(grads, *a, g * factors),
            Op::MulCol(col, m) => {
                if wants(*col) {
                    let dc = (g * val(*m)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(grads, *col, dc);
                }
                if wants(*m) {
                    accumulate(grads, *m, g * val(*col));
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).ncols();
                    if wants(*p) {
                        accumulate(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut full = Matrix::zeros(val(*a).dim());
                let w = g.ncols();
                full.slice_mut(s![.., *start..*start + w]).assign(g);
                accumulate(grads, *a, full);
            }
            Op::GatherRows(a, idx) => {
                let mut full = Matrix::zeros(val(*a).dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut dst = full.row_mut(src);
                    dst += &g.row(r);
                }
                accumulate(grads, *a, full);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= y * (1.0 - y));
                accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(*a))
                    .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => accumulate(grads, *a, softmax_jacobian_apply_q(out, g)),
            Op::LogSoftmaxRows(a) => {
                let sums = g.sum_axis(Axis(1));
                let mut d = g.clone();
                for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                    let s = sums[r];
                    Zip::from(&mut row)
                        .and(out.row(r))
                        .for_each(|d, &lp| *d -= lp.exp() * s);
                }
                accumulate(grads, *a, d);
            }
            Op::Log(a) => accumulate(grads, *a, g / val(*a)),
            Op::Sum(a) => accumulate(grads, *a, Matrix::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                accumulate(grads, *a, Matrix::from_elem(val(*a).dim(), g[[0, 0]] / n));
            }
            Op::SumCols(a) => {
                let d = Matrix::from_shape_fn(val(*a).dim(), |(r, _)| g[[r, 0]]);
                accumulate(grads, *a, d);
            }
            Op::Dropout(a, mask) => accumulate(grads, *a, g * mask),
            Op::Custom(a, rule) => match rule {
                BackwardRule::Identity => accumulate(grads, *a, g.clone()),
                BackwardRule::SoftmaxJacobianAt(z) => {
                    accumulate(grads, *a, softmax_jacobian_apply(z, g))
                }
            },
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &d,
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let z = g.constant(array![[0.0, 0.0]]);
        let q = g.softmax_rows(z);
        assert_eq!(g.value(q), &array![[0.5, 0.5]]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let eye = g.constant(Matrix::eye(3));
        let p = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(p), g.value(a));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros((2, 3)));
        let b = g.constant(Matrix::zeros((2, 3)));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let c = g.constant(Matrix::zeros((3, 2)));
        assert!(g.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let x = g.param(array![[1.0, 2.0]]);
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &array![[2.0, 4.0]]);
        assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.param(array![[1.0, 2.0]]);
        assert!(matches!(g.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::new();
        let x = g.param(array![[1.0, 2.0, 3.0]]);
        let y = g.dropout(x, 0.5);
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let mut g = Graph::training(7);
        let x = g.param(Matrix::ones((40, 50)));
        let y = g.dropout(x, 0.1);
        for &v in g.value(y) {
            assert!(v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-12);
        }
        let mean = g.value(y).mean().unwrap();
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn custom_grad_forward_is_untouched() {
        let mut g = Graph::new();
        let z = g.param(array![[0.3, -1.0, 2.0]]);
        let fwd = array![[0.0, 0.0, 1.0]];
        let out = g.custom_grad(fwd.clone(), z, BackwardRule::Identity).unwrap();
        assert_eq!(g.value(out), &fwd);
    }

    #[test]
    fn unknown_rule_name() {
        let z = Matrix::zeros((1, 3));
        assert!(matches!(
            BackwardRule::from_name("hessian", &z),
            Err(Error::UnknownRule(_))
        ));
        for name in BackwardRule::NAMES {
            BackwardRule::from_name(name, &z).unwrap();
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(array![[2.0]]);
        let x = g.param(array![[3.0]]);
        let y = g.matmul(x, w).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 2.0);
    }
}
