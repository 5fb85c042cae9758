//! Reverse-mode differentiation over a per-step computation record.
//!
//! Every operation appends a node holding its value and the recipe needed to
//! propagate gradients. Parameters enter the record once per tape (looked up
//! by name) and [`Tape::backward`] accumulates their gradients into the
//! [`ParamStore`]. A tape is meant to be built, differentiated once and
//! dropped.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numcore::{DenseArray, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Log {
        x: Var,
        clamped: Vec<bool>,
    },
    Softmax(Var),
    SoftmaxRows {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Row {
        x: Var,
        row: usize,
    },
    StackRows(Vec<Var>),
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Outer(Var, Var),
    Sum(Var),
    Dot(Var, Var),
    Gather {
        x: Var,
        index: usize,
    },
    ScatterAdd {
        x: Var,
        index: Vec<usize>,
    },
    Pad(Var),
    Min(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
}

/// Probabilities are clamped at this floor before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    log_clamps: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
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

    /// Number of log evaluations whose argument was clamped at [`LOG_FLOOR`].
    pub fn log_clamps(&self) -> usize {
        self.log_clamps
    }

    fn push(&mut self, value: DenseArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.constant(DenseArray::vector(data))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(DenseArray::zeros(shape))
    }

    /// Brings a named parameter onto the tape (once per tape).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param(name.to_string()));
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("operands have shapes {:?} and {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        self.push(DenseArray::new(shape, data).expect("shape preserved"), op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let shape = va.shape().to_vec();
        self.push(DenseArray::new(shape, data).expect("shape preserved"), op)
    }

    /// Matrix product. Vectors on the left act as a single row, vectors on the
    /// right as a single column; the result drops the corresponding axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(Error::dim("matmul", format!("left operand has rank {}", sa.len()))),
        };
        let (k2, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(Error::dim("matmul", format!("right operand has rank {}", sb.len()))),
        };
        if k != k2 || (a_vec && b_vec) {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply shapes {sa:?} and {sb:?}"),
            ));
        }
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ad[i * k..(i + 1) * k];
            let o = &mut out[i * n..(i + 1) * n];
            for (p, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (oj, &bj) in o.iter_mut().zip(brow) {
                    *oj += x * bj;
                }
            }
        }
        let shape = if a_vec {
            vec![n]
        } else if b_vec {
            vec![m]
        } else {
            vec![m, n]
        };
        Ok(self.push(
            DenseArray::new(shape, out).expect("matmul shape"),
            Op::MatMul { a, b, m, k, n },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Adds vector `b` to every row of `a` (or to `a` itself when `a` is a
    /// vector).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).as_matrix_dims();
        if self.shape(b) != [cols] {
            return Err(Error::dim(
                "add_row",
                format!("row vector {:?} does not match {:?}", self.shape(b), self.shape(a)),
            ));
        }
        let bd = self.data(b).to_vec();
        let mut data = self.data(a).to_vec();
        for r in 0..rows {
            for (x, y) in data[r * cols..(r + 1) * cols].iter_mut().zip(&bd) {
                *x += y;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(DenseArray::new(shape, data).expect("shape"), Op::AddRow(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("min", a, b)?;
        Ok(self.zip_map(a, b, f64::min, Op::Min(a, b)))
    }

    /// `a * s` where `s` is a scalar node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != [1] {
            return Err(Error::dim(
                "mul_scalar",
                format!("scalar has shape {:?}", self.shape(s)),
            ));
        }
        let k = self.scalar(s);
        Ok(self.map(a, |x| x * k, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddConst(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    /// Natural log with arguments clamped at [`LOG_FLOOR`]; clamped entries
    /// pass no gradient and are counted in [`Tape::log_clamps`].
    pub fn log(&mut self, a: Var) -> Var {
        let clamped: Vec<bool> = self.data(a).iter().map(|&x| x < LOG_FLOOR).collect();
        self.log_clamps += clamped.iter().filter(|&&c| c).count();
        self.map(a, |x| x.max(LOG_FLOOR).ln(), Op::Log { x: a, clamped })
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 1 {
            return Err(Error::Argument(format!(
                "softmax expects a vector, got shape {:?}",
                self.shape(a)
            )));
        }
        let mut data = self.data(a).to_vec();
        softmax_in_place(&mut data);
        Ok(self.push(DenseArray::vector(data), Op::Softmax(a)))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).as_matrix_dims();
        let mut data = self.data(a).to_vec();
        for r in 0..rows {
            softmax_in_place(&mut data[r * cols..(r + 1) * cols]);
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            DenseArray::new(shape, data).expect("shape"),
            Op::SoftmaxRows { x: a, rows, cols },
        ))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            if self.value(p).rank() != 1 {
                return Err(Error::dim("concat", format!("part has shape {:?}", self.shape(p))));
            }
            data.extend_from_slice(self.data(p));
        }
        if data.is_empty() {
            return Err(Error::Argument("concat of nothing".into()));
        }
        Ok(self.push(DenseArray::vector(data), Op::Concat(parts.to_vec())))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(a).len();
        if self.value(a).rank() != 1 || start + len > n || len == 0 {
            return Err(Error::dim(
                "slice",
                format!("[{start}, {}) out of range for shape {:?}", start + len, self.shape(a)),
            ));
        }
        let data = self.data(a)[start..start + len].to_vec();
        Ok(self.push(DenseArray::vector(data), Op::Slice { x: a, start }))
    }

    /// Row `row` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (rows, _) = self.value(a).as_matrix_dims();
        if self.value(a).rank() != 2 || row >= rows {
            return Err(Error::dim(
                "row",
                format!("row {row} out of range for shape {:?}", self.shape(a)),
            ));
        }
        let data = self.value(a).row(row).to_vec();
        Ok(self.push(DenseArray::vector(data), Op::Row { x: a, row }))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Argument("stack_rows of nothing".into()))?;
        let cols = self.value(first).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if self.shape(r) != [cols] {
                return Err(Error::dim(
                    "stack_rows",
                    format!("row shapes {:?} and {:?} differ", self.shape(first), self.shape(r)),
                ));
            }
            data.extend_from_slice(self.data(r));
        }
        Ok(self.push(
            DenseArray::new(vec![rows.len(), cols], data).expect("shape"),
            Op::StackRows(rows.to_vec()),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 2 {
            return Err(Error::dim("transpose", format!("shape {:?}", self.shape(a))));
        }
        let (rows, cols) = self.value(a).as_matrix_dims();
        let src = self.data(a);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push(
            DenseArray::new(vec![cols, rows], data).expect("shape"),
            Op::Transpose { x: a, rows, cols },
        ))
    }

    /// Outer product of two vectors, `[len(a), len(b)]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).rank() != 1 || self.value(b).rank() != 1 {
            return Err(Error::dim(
                "outer",
                format!("shapes {:?} and {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let data: Vec<f64> = ad.iter().flat_map(|&x| bd.iter().map(move |&y| x * y)).collect();
        let shape = vec![ad.len(), bd.len()];
        Ok(self.push(DenseArray::new(shape, data).expect("shape"), Op::Outer(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(DenseArray::scalar(s), Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(DenseArray::scalar(s), Op::Dot(a, b)))
    }

    pub fn gather(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.value(a).len();
        if index >= n {
            return Err(Error::dim(
                "gather",
                format!("index {index} out of range for length {n}"),
            ));
        }
        let v = self.data(a)[index];
        Ok(self.push(DenseArray::scalar(v), Op::Gather { x: a, index }))
    }

    /// `out[index[i]] += a[i]` into a zero vector of length `size`.
    pub fn scatter_add(&mut self, a: Var, index: &[usize], size: usize) -> Result<Var> {
        if self.value(a).len() != index.len() || index.iter().any(|&i| i >= size) {
            return Err(Error::dim(
                "scatter_add",
                format!(
                    "{} values, {} indices, target size {size}",
                    self.value(a).len(),
                    index.len()
                ),
            ));
        }
        let mut data = vec![0.0; size];
        for (&i, &x) in index.iter().zip(self.data(a)) {
            data[i] += x;
        }
        Ok(self.push(
            DenseArray::vector(data),
            Op::ScatterAdd {
                x: a,
                index: index.to_vec(),
            },
        ))
    }

    /// Zero-extends a vector to length `size`.
    pub fn pad(&mut self, a: Var, size: usize) -> Result<Var> {
        let n = self.value(a).len();
        if self.value(a).rank() != 1 || size < n {
            return Err(Error::dim("pad", format!("cannot pad {:?} to {size}", self.shape(a))));
        }
        let mut data = self.data(a).to_vec();
        data.resize(size, 0.0);
        Ok(self.push(DenseArray::vector(data), Op::Pad(a)))
    }

    /// Backpropagates from the scalar `root`, scaling its gradient by `seed`,
    /// and accumulates parameter gradients into `store`.
    pub fn backward(&self, root: Var, seed: f64, store: &mut ParamStore) -> Result<()> {
        if self.shape(root) != [1] {
            return Err(Error::Argument(format!(
                "backward root must be a scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.value(root).is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![seed]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => store.accumulate_grad(name, &g)?,
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let ad = self.data(*a);
                    let bd = self.data(*b);
                    {
                        let ga = acc(&mut grads, *a, m * k);
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                ga[i * k + p] += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    let gb = acc(&mut grads, *b, k * n);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &gj) in gb[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *o += x * gj;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    let gb = acc(&mut grads, *b, g.len());
                    for (o, x) in gb.iter_mut().zip(&g) {
                        *o -= x;
                    }
                }
                Op::AddRow(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    let cols = self.value(*b).len();
                    let gb = acc(&mut grads, *b, cols);
                    for chunk in g.chunks(cols) {
                        add_into(gb, chunk);
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
                Op::Min(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        if ad[i] <= bd[i] {
                            ga[i] += g[i];
                        }
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        if ad[i] > bd[i] {
                            gb[i] += g[i];
                        }
                    }
                }
                Op::MulScalar(a, s) => {
                    let k = self.scalar(*s);
                    let ad = self.data(*a);
                    let ds: f64 = g.iter().zip(ad).map(|(x, y)| x * y).sum();
                    let ga = acc(&mut grads, *a, g.len());
                    for (o, x) in ga.iter_mut().zip(&g) {
                        *o += x * k;
                    }
                    acc(&mut grads, *s, 1)[0] += ds;
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for (o, x) in ga.iter_mut().zip(&g) {
                        *o += x * c;
                    }
                }
                Op::AddConst(a) => add_into(acc(&mut grads, *a, g.len()), &g),
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
                Op::Softplus(a) => {
                    let ad = self.data(*a);
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * sigmoid(ad[i]);
                    }
                }
                Op::Log { x, clamped } => {
                    let xd = self.data(*x);
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        if !clamped[i] {
                            gx[i] += g[i] / xd[i];
                        }
                    }
                }
                Op::Softmax(a) => {
                    let inner: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += out[i] * (g[i] - inner);
                    }
                }
                Op::SoftmaxRows { x, rows, cols } => {
                    let gx = acc(&mut grads, *x, g.len());
                    for r in 0..*rows {
                        let span = r * cols..(r + 1) * cols;
                        let (gr, yr) = (&g[span.clone()], &out[span.clone()]);
                        let inner: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for (j, o) in gx[span].iter_mut().enumerate() {
                            *o += yr[j] * (gr[j] - inner);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(acc(&mut grads, p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    add_into(&mut gx[*start..*start + g.len()], &g);
                }
                Op::Row { x, row } => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    let cols = g.len();
                    add_into(&mut gx[row * cols..(row + 1) * cols], &g);
                }
                Op::StackRows(rows) => {
                    let cols = g.len() / rows.len();
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(acc(&mut grads, r, cols), &g[i * cols..(i + 1) * cols]);
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    let gx = acc(&mut grads, *x, g.len());
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
                Op::Outer(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let n = bd.len();
                    let ga = acc(&mut grads, *a, ad.len());
                    for i in 0..ad.len() {
                        ga[i] += g[i * n..(i + 1) * n].iter().zip(bd).map(|(x, y)| x * y).sum::<f64>();
                    }
                    let gb = acc(&mut grads, *b, n);
                    for i in 0..ad.len() {
                        for j in 0..n {
                            gb[j] += g[i * n + j] * ad[i];
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Dot(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let ga = acc(&mut grads, *a, ad.len());
                    for (o, y) in ga.iter_mut().zip(bd) {
                        *o += g[0] * y;
                    }
                    let gb = acc(&mut grads, *b, bd.len());
                    for (o, x) in gb.iter_mut().zip(ad) {
                        *o += g[0] * x;
                    }
                }
                Op::Gather { x, index } => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, n)[*index] += g[0];
                }
                Op::ScatterAdd { x, index } => {
                    let gx = acc(&mut grads, *x, index.len());
                    for (o, &i) in gx.iter_mut().zip(index) {
                        *o += g[i];
                    }
                }
                Op::Pad(a) => {
                    let n = self.value(*a).len();
                    add_into(acc(&mut grads, *a, n), &g[..n]);
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, value: DenseArray) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, value).unwrap();
        s
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut t = Tape::new();
        let z = t.constant_vec(vec![0.0, 0.0, 0.0]);
        let p = t.softmax(z).unwrap();
        for &x in t.data(p) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = t.constant_vec(vec![1000.0, 0.0]);
        let q = t.softmax(big).unwrap();
        assert!((t.data(q)[0] - 1.0).abs() < 1e-15 && t.data(q)[1] >= 0.0);
        assert!(t.value(q).is_finite());
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let mut t = Tape::new();
        let z = t.constant_vec(vec![1.0, 2.0, 3.0]);
        let p = t.softmax(z).unwrap();
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, &x) in t.data(p).iter().enumerate() {
            assert!((x - ((i + 1) as f64).exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_empty_is_rejected() {
        let mut t = Tape::new();
        let z = t.constant(DenseArray::zeros(&[2, 2]));
        assert!(matches!(t.softmax(z), Err(Error::Argument(_))));
    }

    #[test]
    fn matmul_shape_errors_name_operands() {
        let mut t = Tape::new();
        let a = t.constant(DenseArray::zeros(&[3]));
        let b = t.constant(DenseArray::zeros(&[4, 2]));
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[3]") && err.to_string().contains("[4, 2]"));
    }

    #[test]
    fn quadratic_gradient() {
        let mut s = store_with("theta", DenseArray::scalar(3.0));
        let mut t = Tape::new();
        let th = t.param(&s, "theta").unwrap();
        let sq = t.mul(th, th).unwrap();
        let half = t.scale(sq, 0.5);
        t.backward(half, 1.0, &mut s).unwrap();
        assert_eq!(s.grad("theta").unwrap().item(), 3.0);
    }

    #[test]
    fn clamped_log_counts_and_blocks_gradient() {
        let mut s = store_with("p", DenseArray::vector(vec![0.0, 0.5]));
        let mut t = Tape::new();
        let p = t.param(&s, "p").unwrap();
        let l = t.log(p);
        let total = t.sum(l);
        assert_eq!(t.log_clamps(), 1);
        t.backward(total, 1.0, &mut s).unwrap();
        assert_eq!(s.grad("p").unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn scatter_add_sums_repeated_indices() {
        let mut t = Tape::new();
        let a = t.constant_vec(vec![0.25, 0.5, 0.25]);
        let out = t.scatter_add(a, &[1, 1, 0], 3).unwrap();
        assert_eq!(t.data(out), &[0.25, 0.75, 0.0]);
    }
}
