//! Operation tape and the reverse sweep.

use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Max { input: Var, argmax: usize },
    Gather { input: Var, indices: Vec<usize> },
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Softmax(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Max { .. } => "max",
            Op::Gather { .. } => "gather",
            Op::Reshape(..) => "reshape",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive operations in evaluation order.
///
/// Every record's inputs precede it, so a single reverse pass over the
/// records visits each one exactly once.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not influence the root.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes.get(var.0).map_or(&[][..], Vec::as_slice)),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Records an input (parameter, data or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn is_leaf(&self, var: Var) -> bool {
        matches!(self.nodes[var.0].op, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    fn dims(&self, op: &'static str, a: Var) -> Result<(usize, usize), AutodiffError> {
        self.value(a)
            .dims2()
            .ok_or_else(|| AutodiffError::RankTooHigh {
                op,
                shape: self.value(a).shape().to_vec(),
            })
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the row vector `b` (length `cols`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims("add_row", a)?;
        if self.value(b).len() != c {
            return Err(self.mismatch("add_row", a, b));
        }
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..r {
            for (x, bj) in v.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&bias) {
                *x += bj;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    /// Scales row `i` of `a` by `c[i]`; `c` holds one value per row.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var, AutodiffError> {
        let (r, cols) = self.dims("mul_col", a)?;
        if self.value(c).len() != r {
            return Err(self.mismatch("mul_col", a, c));
        }
        let col = self.value(c).data().to_vec();
        let mut v = self.value(a).clone();
        for (i, ci) in col.iter().enumerate() {
            for x in &mut v.data_mut()[i * cols..(i + 1) * cols] {
                *x *= ci;
            }
        }
        self.push(v, Op::MulCol(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::Shift(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.dims("matmul", a)?;
        let (k2, n) = self.dims("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::matrix(m, n, data), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.dims("transpose", a)?;
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Concatenates along the last axis. All inputs must have the same row
    /// count; vectors concatenate into a vector.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let first = *inputs.first().ok_or(AutodiffError::EmptyInput { op: "concat" })?;
        let all_vectors = inputs.iter().all(|&v| self.value(v).shape().len() == 1);
        let rows = self.dims("concat", first)?.0;
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (r, c) = self.dims("concat", v)?;
            if r != rows {
                return Err(self.mismatch("concat", first, v));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&v, &w) in inputs.iter().zip(&widths) {
            let src = self.value(v).data();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Concat(inputs.to_vec()))
    }

    /// Columns `[start, start + len)` of `a` (elements, for vectors).
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims("slice", a)?;
        if start + len > c || len == 0 {
            return Err(AutodiffError::OutOfRange {
                op: "slice",
                index: start + len,
                bound: c,
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let shape = if self.value(a).shape().len() == 1 { vec![len] } else { vec![r, len] };
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Slice { input: a, start })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Natural log. Non-positive entries are an error, not `-inf`.
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(AutodiffError::Domain { op: "log", value: bad });
        }
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x < 0.0 || x.is_nan()) {
            return Err(AutodiffError::Domain { op: "sqrt", value: bad });
        }
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Softmax along the last axis (each row of a matrix independently).
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims("softmax", a)?;
        if c == 0 {
            return Err(AutodiffError::EmptyInput { op: "softmax" });
        }
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_mut(c).take(r) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(AutodiffError::EmptyInput { op: "mean" });
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Largest element; on ties the lowest index carries the subgradient.
    pub fn max(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (argmax, best) = t
            .data()
            .iter()
            .copied()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, x)| match acc {
                Some((_, b)) if x <= b => acc,
                _ => Some((i, x)),
            })
            .ok_or(AutodiffError::EmptyInput { op: "max" })?;
        self.push(Tensor::scalar(best), Op::Max { input: a, argmax })
    }

    /// Picks flat elements of `a` by index into a tensor of `shape`.
    pub fn gather(
        &mut self,
        a: Var,
        indices: Vec<usize>,
        shape: &[usize],
    ) -> Result<Var, AutodiffError> {
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len());
        for &ix in &indices {
            let x = *src.get(ix).ok_or(AutodiffError::OutOfRange {
                op: "gather",
                index: ix,
                bound: src.len(),
            })?;
            data.push(x);
        }
        let value = Tensor::new(shape.to_vec(), data)?;
        self.push(value, Op::Gather { input: a, indices })
    }

    /// Selects whole rows of a matrix, in the given order.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims("select_rows", a)?;
        let mut indices = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(AutodiffError::OutOfRange {
                    op: "select_rows",
                    index: i,
                    bound: r,
                });
            }
            indices.extend(i * c..(i + 1) * c);
        }
        self.gather(a, indices, &[rows.len(), c])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push(v, Op::Reshape(a))
    }

    /// Reverse sweep from a one-element `root`, seeded with `seed`.
    ///
    /// Only leaf gradients are kept in the result.
    pub fn backward(&self, root: Var, seed: f64) -> Result<Gradients, AutodiffError> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), seed));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip(g, vb, |gi, bi| gi * bi));
                accumulate(grads, *b, zip(g, va, |gi, ai| gi * ai));
            }
            Op::AddRow(a, b) => {
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (acc, x) in gb.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                let shape = self.value(*b).shape().to_vec();
                accumulate(grads, *b, Tensor::new(shape, gb).expect("bias shape"));
            }
            Op::MulCol(a, c) => {
                let (va, vc) = (self.value(*a), self.value(*c));
                let cols = g.cols();
                let mut ga = g.clone();
                let mut gc = vec![0.0; vc.len()];
                for (i, ci) in vc.data().iter().enumerate() {
                    let grow = &mut ga.data_mut()[i * cols..(i + 1) * cols];
                    let arow = &va.data()[i * cols..(i + 1) * cols];
                    let mut dot = 0.0;
                    for (gx, ax) in grow.iter_mut().zip(arow) {
                        dot += *gx * ax;
                        *gx *= ci;
                    }
                    gc[i] = dot;
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *c, Tensor::new(vc.shape().to_vec(), gc).expect("col shape"));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::Shift(a) => accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2().expect("rank checked");
                let n = vb.cols();
                let ga = matmul_nt(g.data(), vb.data(), m, n, k);
                let gb = matmul_tn(va.data(), g.data(), m, k, n);
                accumulate(grads, *a, Tensor::new(va.shape().to_vec(), ga).expect("a shape"));
                accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), gb).expect("b shape"));
            }
            Op::Transpose(a) => {
                let shape = self.value(*a).shape().to_vec();
                let gt = g.transpose().reshaped(&shape).expect("transpose shape");
                accumulate(grads, *a, gt);
            }
            Op::Concat(inputs) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &v in inputs {
                    let vt = self.value(v);
                    let w = vt.cols();
                    let mut part = Vec::with_capacity(rows * w);
                    for i in 0..rows {
                        part.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    accumulate(grads, v, Tensor::new(vt.shape().to_vec(), part).expect("part"));
                }
            }
            Op::Slice { input, start } => {
                let vt = self.value(*input);
                let c = vt.cols();
                let len = g.cols();
                let mut full = Tensor::zeros(vt.shape());
                for i in 0..g.rows() {
                    full.data_mut()[i * c + start..i * c + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                accumulate(grads, *input, full);
            }
            Op::Tanh(a) => accumulate(grads, *a, zip(g, y, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Sigmoid(a) => accumulate(grads, *a, zip(g, y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::Exp(a) => accumulate(grads, *a, zip(g, y, |gi, yi| gi * yi)),
            Op::Log(a) => accumulate(grads, *a, zip(g, self.value(*a), |gi, xi| gi / xi)),
            Op::Sqrt(a) => accumulate(grads, *a, zip(g, y, |gi, yi| gi / (2.0 * yi))),
            Op::Square(a) => accumulate(grads, *a, zip(g, self.value(*a), |gi, xi| 2.0 * gi * xi)),
            Op::Softmax(a) => {
                let c = y.cols();
                let mut ga = Vec::with_capacity(y.len());
                for (yrow, grow) in y.data().chunks(c).zip(g.data().chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    ga.extend(yrow.iter().zip(grow).map(|(yi, gi)| yi * (gi - dot)));
                }
                accumulate(grads, *a, Tensor::new(y.shape().to_vec(), ga).expect("softmax"));
            }
            Op::Sum(a) => {
                let gs = g.data()[0];
                accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), gs));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let gs = g.data()[0] / va.len() as f64;
                accumulate(grads, *a, Tensor::filled(va.shape(), gs));
            }
            Op::Max { input, argmax } => {
                let mut ga = Tensor::zeros(self.value(*input).shape());
                ga.data_mut()[*argmax] = g.data()[0];
                accumulate(grads, *input, ga);
            }
            Op::Gather { input, indices } => {
                let mut ga = Tensor::zeros(self.value(*input).shape());
                for (&ix, gi) in indices.iter().zip(g.data()) {
                    ga.data_mut()[ix] += gi;
                }
                accumulate(grads, *input, ga);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, g.clone().reshaped(&shape).expect("reshape"));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("zip shape")
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, contribution: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_scaled(&contribution, 1.0),
        slot @ None => *slot = Some(contribution),
    }
}
