//! Dense row-major tensors of rank 1 or 2.
//!
//! A [`Tensor`] is a plain value. Differentiation happens on a [`crate::tape::Tape`],
//! which records operations over tensors registered with it; gradients land in
//! [`Tensor::grad`] only for tensors that opted in with [`Tensor::with_grad`].

use crate::error::{Error, Result};

/// Element type. 64-bit unless the `f32` feature is enabled.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
    grad: Option<Vec<Real>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::Contract(format!(
                "tensors have rank 1 or 2, got shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<Real>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn scalar(value: Real) -> Self {
        Self::vector(vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: Real) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    /// Allocates a zeroed gradient buffer, marking the tensor as trainable.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> Option<&[Real]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [Real]> {
        self.grad.as_deref_mut()
    }

    /// Split borrow of values and gradient, for in-place optimizer updates.
    pub fn data_and_grad_mut(&mut self) -> (&mut [Real], Option<&mut [Real]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer; no-op when the tensor is not trainable.
    pub fn accumulate_grad(&mut self, delta: &[Real]) -> Result<()> {
        let Some(g) = self.grad.as_mut() else {
            return Ok(());
        };
        if g.len() != delta.len() {
            return Err(Error::shape("accumulate_grad", &self.shape, &[delta.len()]));
        }
        for (a, b) in g.iter_mut().zip(delta) {
            *a += *b;
        }
        Ok(())
    }

    /// Number of rows; a rank-1 tensor counts as one row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> Real {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy without the gradient buffer.
    pub fn detached(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<Real>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad: None,
        }
    }
}

/// `c = a · b` for row-major `a: m×k`, `b: k×p`.
pub(crate) fn matmul_raw(a: &[Real], b: &[Real], m: usize, k: usize, p: usize) -> Vec<Real> {
    let mut c = vec![0.0; m * p];
    for i in 0..m {
        let crow = &mut c[i * p..(i + 1) * p];
        let arow = &a[i * k..(i + 1) * k];
        // four rank-1 updates per pass over the output row
        let mut kk = 0;
        while kk + 4 <= k {
            let (a0, a1, a2, a3) = (arow[kk], arow[kk + 1], arow[kk + 2], arow[kk + 3]);
            let b0 = &b[kk * p..(kk + 1) * p];
            let b1 = &b[(kk + 1) * p..(kk + 2) * p];
            let b2 = &b[(kk + 2) * p..(kk + 3) * p];
            let b3 = &b[(kk + 3) * p..(kk + 4) * p];
            axpy4(crow, [a0, a1, a2, a3], [b0, b1, b2, b3]);
            kk += 4;
        }
        for kk in kk..k {
            let aik = arow[kk];
            for (cv, &bv) in crow.iter_mut().zip(&b[kk * p..(kk + 1) * p]) {
                *cv += aik * bv;
            }
        }
    }
    c
}

/// `c += a₀b₀ + a₁b₁ + a₂b₂ + a₃b₃`, summed left to right before the add.
#[inline]
fn axpy4(c: &mut [Real], a: [Real; 4], b: [&[Real]; 4]) {
    let n = c.len();
    let (b0, b1, b2, b3) = (&b[0][..n], &b[1][..n], &b[2][..n], &b[3][..n]);
    for j in 0..n {
        c[j] += a[0] * b0[j] + a[1] * b1[j] + a[2] * b2[j] + a[3] * b3[j];
    }
}

/// `c = a · bᵀ` for row-major `a: m×k`, `b: p×k`.
pub(crate) fn matmul_nt_raw(a: &[Real], b: &[Real], m: usize, k: usize, p: usize) -> Vec<Real> {
    let mut bt = vec![0.0; k * p];
    for j in 0..p {
        for kk in 0..k {
            bt[kk * p + j] = b[j * k + kk];
        }
    }
    matmul_raw(a, &bt, m, k, p)
}

/// `c += aᵀ · b` for row-major `a: m×k`, `b: m×p`, `c: k×p`.
pub(crate) fn matmul_tn_acc(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, p: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let b0 = &b[i * p..(i + 1) * p];
        let b1 = &b[(i + 1) * p..(i + 2) * p];
        let b2 = &b[(i + 2) * p..(i + 3) * p];
        let b3 = &b[(i + 3) * p..(i + 4) * p];
        for kk in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + kk], a[(i + 1) * k + kk], a[(i + 2) * k + kk], a[(i + 3) * k + kk]);
            let crow = &mut c[kk * p..(kk + 1) * p];
            axpy4(crow, [a0, a1, a2, a3], [b0, b1, b2, b3]);
        }
        i += 4;
    }
    for i in i..m {
        let brow = &b[i * p..(i + 1) * p];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (cv, &bv) in c[kk * p..(kk + 1) * p].iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// Dot product with four interleaved partial sums.
pub(crate) fn dot(a: &[Real], b: &[Real]) -> Real {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: Real = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm(a: &[Real]) -> Real {
    dot(a, a).sqrt()
}

/// Guard added to each norm in [`cosine`].
pub const COSINE_EPS: Real = 1e-12;

/// Cosine similarity `u·v / ((‖u‖+ε)(‖v‖+ε))`. Zero vectors give a similarity near 0.
pub fn cosine(u: &[Real], v: &[Real]) -> Result<Real> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", &[u.len()], &[v.len()]));
    }
    Ok(dot(u, v) / ((norm(u) + COSINE_EPS) * (norm(v) + COSINE_EPS)))
}
