//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! Every operation appends a node holding its output value and the indices of its
//! inputs. [`Tape::backward`] walks the nodes in reverse and accumulates adjoints
//! into the leaves registered with [`Tape::param`]. A tape is meant to be built for
//! one forward pass and dropped afterwards.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_acc, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, p: usize },
    MatMulNt { a: Var, b: Var, m: usize, k: usize, p: usize },
    Add { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: Real },
    Relu { a: Var },
    Tanh { a: Var },
    Sigmoid { a: Var },
    Log { a: Var },
    Clamp { a: Var, lo: Real, hi: Real },
    SoftmaxRows { a: Var },
    MeanRows { a: Var },
    Sum { a: Var },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceCols { a: Var, start: usize },
    Transpose { a: Var },
    GatherRows { a: Var, idx: Vec<usize> },
    Select { a: Var, idx: Vec<usize> },
    Reshape { a: Var },
    SqDiffSum { a: Var, b: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    grad: Option<Vec<Real>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Registers a differentiable leaf. Its gradient is readable after [`Tape::backward`].
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = t.detached();
        let n = value.numel();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
            grad: Some(vec![0.0; n]),
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            tracked: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked copy of `v`'s current value. Work built on it costs nothing in
    /// [`Tape::backward`].
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.detached();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated into a leaf created with [`Tape::param`].
    pub fn grad(&self, v: Var) -> Option<&[Real]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Adds the leaf's accumulated gradient into `target`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            op,
            tracked,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(Real) -> Real) -> Var {
        let src = self.value(a);
        let out = Tensor::from_parts(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect());
        self.push(out, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(Real, Real) -> Real) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(out, op, &[a, b])
    }

    /// `a[m×k] · b[k×p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, p) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, p);
        Ok(self.push(Tensor::from_parts(vec![m, p], data), Op::MatMul { a, b, m, k, p }, &[a, b]))
    }

    /// `a[m×k] · b[p×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (p, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let data = matmul_nt_raw(self.value(a).data(), self.value(b).data(), m, k, p);
        Ok(self.push(Tensor::from_parts(vec![m, p], data), Op::MatMulNt { a, b, m, k, p }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add { a, b }, |x, y| x + y))
    }

    /// Adds a length-`d` vector to every row of an `m×d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, d) = self.dims2(a, "add_row")?;
        if self.shape(row) != [d] {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, &y) in data[i * d..(i + 1) * d].iter_mut().zip(r) {
                *x += y;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, d], data), Op::AddRow { a, row }, &[a, row]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub { a, b }, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul { a, b }, |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, factor: Real) -> Var {
        self.map(a, Op::Scale { a, factor }, |x| x * factor)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu { a }, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh { a }, Real::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid { a }, sigmoid)
    }

    /// Natural log; inputs must be positive.
    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log { a }, Real::ln)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, a: Var, lo: Real, hi: Real) -> Var {
        self.map(a, Op::Clamp { a, lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, p) = self.dims2(a, "softmax_rows")?;
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut data[i * p..(i + 1) * p]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, p], data), Op::SoftmaxRows { a }, &[a]))
    }

    /// Column means of an `m×d` matrix, giving a length-`d` vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, d) = self.dims2(a, "mean_rows")?;
        if m == 0 {
            return Err(Error::Empty("mean_rows"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; d];
        for i in 0..m {
            for (o, &x) in out.iter_mut().zip(&src[i * d..(i + 1) * d]) {
                *o += x;
            }
        }
        let inv = 1.0 / m as Real;
        out.iter_mut().for_each(|x| *x *= inv);
        Ok(self.push(Tensor::from_parts(vec![d], out), Op::MeanRows { a }, &[a]))
    }

    /// Sum of all elements, as a length-1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows"))?;
        let (_, d) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != d {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * d);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], data),
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Columns `start..start+width` of an `m×d` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, d) = self.dims2(a, "slice_cols")?;
        if start + width > d {
            return Err(Error::Index {
                index: start + width,
                len: d,
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&src[i * d + start..i * d + start + width]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, width], data), Op::SliceCols { a, start }, &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], data), Op::Transpose { a }, &[a]))
    }

    /// `out[s] = a[idx[s]]`; gradients scatter back to the selected rows.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, d) = self.dims2(a, "gather_rows")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= m {
                return Err(Error::Index { index: i, len: m });
            }
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![idx.len(), d], data),
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        ))
    }

    /// Picks elements by flat index into a vector.
    pub fn select(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx {
            let x = *src.get(i).ok_or(Error::Index {
                index: i,
                len: src.len(),
            })?;
            data.push(x);
        }
        Ok(self.push(
            Tensor::vector(data),
            Op::Select {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let n: usize = shape.iter().product();
        if n != src.numel() {
            return Err(Error::shape("reshape", src.shape(), shape));
        }
        let out = Tensor::new(shape.to_vec(), src.data().to_vec())?;
        Ok(self.push(out, Op::Reshape { a }, &[a]))
    }

    /// `Σ (a − b)²` over all elements.
    pub fn sq_diff_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sq_diff_sum")?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::SqDiffSum { a, b }, &[a, b]))
    }

    /// Accumulates `∂loss/∂leaf` into every leaf registered with [`Tape::param`].
    /// Calling it again adds the same gradient a second time.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].tracked {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<Real>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if let Some(buf) = self.nodes[i].grad.as_mut() {
                    for (b, x) in buf.iter_mut().zip(&g) {
                        *b += *x;
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[Real], adj: &mut [Option<Vec<Real>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let live = |v: Var| nodes[v.0].tracked;
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, p } => {
                let (m, k, p) = (*m, *k, *p);
                if live(*a) {
                    // dA = dC · Bᵀ
                    let da = matmul_nt_raw(g, val(*b), m, p, k);
                    acc(adj, *a, &da);
                }
                if live(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * p];
                    matmul_tn_acc(&mut db, val(*a), g, m, k, p);
                    acc(adj, *b, &db);
                }
            }
            Op::MatMulNt { a, b, m, k, p } => {
                let (m, k, p) = (*m, *k, *p);
                if live(*a) {
                    // C = A·Bᵀ, dA = dC · B
                    let da = matmul_raw(g, val(*b), m, p, k);
                    acc(adj, *a, &da);
                }
                if live(*b) {
                    // dB = dCᵀ · A
                    let mut db = vec![0.0; p * k];
                    matmul_tn_acc(&mut db, g, val(*a), m, p, k);
                    acc(adj, *b, &db);
                }
            }
            Op::Add { a, b } => {
                acc_if(adj, live(*a), *a, g);
                acc_if(adj, live(*b), *b, g);
            }
            Op::AddRow { a, row } => {
                acc_if(adj, live(*a), *a, g);
                if live(*row) {
                    let d = val(*row).len();
                    let mut dr = vec![0.0; d];
                    for chunk in g.chunks(d) {
                        for (o, &x) in dr.iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    acc(adj, *row, &dr);
                }
            }
            Op::Sub { a, b } => {
                acc_if(adj, live(*a), *a, g);
                if live(*b) {
                    let neg: Vec<Real> = g.iter().map(|x| -x).collect();
                    acc(adj, *b, &neg);
                }
            }
            Op::Mul { a, b } => {
                if live(*a) {
                    let d: Vec<Real> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                    acc(adj, *a, &d);
                }
                if live(*b) {
                    let d: Vec<Real> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                    acc(adj, *b, &d);
                }
            }
            Op::Scale { a, factor } => {
                let d: Vec<Real> = g.iter().map(|x| x * factor).collect();
                acc(adj, *a, &d);
            }
            Op::Relu { a } => {
                let d: Vec<Real> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, &inp)| if inp > 0.0 { *x } else { 0.0 })
                    .collect();
                acc(adj, *a, &d);
            }
            Op::Tanh { a } => {
                let d: Vec<Real> = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                acc(adj, *a, &d);
            }
            Op::Sigmoid { a } => {
                let d: Vec<Real> = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                acc(adj, *a, &d);
            }
            Op::Log { a } => {
                let d: Vec<Real> = g.iter().zip(val(*a)).map(|(x, y)| x / y).collect();
                acc(adj, *a, &d);
            }
            Op::Clamp { a, lo, hi } => {
                let d: Vec<Real> = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, &y)| if y < *lo || y > *hi { 0.0 } else { *x })
                    .collect();
                acc(adj, *a, &d);
            }
            Op::SoftmaxRows { a } => {
                let p = nodes[i].value.cols();
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), yrow) in d.chunks_mut(p).zip(g.chunks(p)).zip(out.chunks(p)) {
                    let inner: Real = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    for ((o, &x), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o = y * (x - inner);
                    }
                }
                acc(adj, *a, &d);
            }
            Op::MeanRows { a } => {
                let m = nodes[a.0].value.rows();
                let inv = 1.0 / m as Real;
                let row: Vec<Real> = g.iter().map(|x| x * inv).collect();
                let d: Vec<Real> = (0..m).flat_map(|_| row.iter().copied()).collect();
                acc(adj, *a, &d);
            }
            Op::Sum { a } => {
                let d = vec![g[0]; nodes[a.0].value.numel()];
                acc(adj, *a, &d);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p.0].value.numel();
                    acc_if(adj, live(p), p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let total = nodes[i].value.cols();
                let mut start = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if live(p) {
                        let d: Vec<Real> = g
                            .chunks(total)
                            .flat_map(|row| row[start..start + w].iter().copied())
                            .collect();
                        acc(adj, p, &d);
                    }
                    start += w;
                }
            }
            Op::SliceCols { a, start } => {
                let src = &nodes[a.0].value;
                let (m, d) = (src.rows(), src.cols());
                let w = nodes[i].value.cols();
                let mut da = vec![0.0; m * d];
                for r in 0..m {
                    da[r * d + start..r * d + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                acc(adj, *a, &da);
            }
            Op::Transpose { a } => {
                let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        d[r * n + c] = g[c * m + r];
                    }
                }
                acc(adj, *a, &d);
            }
            Op::GatherRows { a, idx } => {
                let src = &nodes[a.0].value;
                let d = src.cols();
                let mut da = vec![0.0; src.numel()];
                for (s, &r) in idx.iter().enumerate() {
                    for (o, &x) in da[r * d..(r + 1) * d].iter_mut().zip(&g[s * d..(s + 1) * d]) {
                        *o += x;
                    }
                }
                acc(adj, *a, &da);
            }
            Op::Select { a, idx } => {
                let mut da = vec![0.0; nodes[a.0].value.numel()];
                for (&j, &x) in idx.iter().zip(g) {
                    da[j] += x;
                }
                acc(adj, *a, &da);
            }
            Op::Reshape { a } => acc(adj, *a, g),
            Op::SqDiffSum { a, b } => {
                let diff: Vec<Real> = val(*a).iter().zip(val(*b)).map(|(x, y)| 2.0 * g[0] * (x - y)).collect();
                acc_if(adj, live(*a), *a, &diff);
                if live(*b) {
                    let neg: Vec<Real> = diff.iter().map(|x| -x).collect();
                    acc(adj, *b, &neg);
                }
            }
        }
    }
}

fn acc(adj: &mut [Option<Vec<Real>>], v: Var, d: &[Real]) {
    match adj[v.0].as_mut() {
        Some(buf) => {
            for (b, x) in buf.iter_mut().zip(d) {
                *b += *x;
            }
        }
        None => adj[v.0] = Some(d.to_vec()),
    }
}

fn acc_if(adj: &mut [Option<Vec<Real>>], live: bool, v: Var, d: &[Real]) {
    if live {
        acc(adj, v, d);
    }
}

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over one slice.
pub(crate) fn softmax_in_place(row: &mut [Real]) {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
