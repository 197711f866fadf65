//! Dense row-major `f64` tensors.

use std::fmt;

use super::AutodiffError;

/// A dense row-major tensor of 64-bit floats.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::Shape {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AutodiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AutodiffError::Shape {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, AutodiffError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(AutodiffError::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// `a[m,k] · b[k,n]` into a fresh buffer.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m,n] += aᵀ · g` where `a` is `[k,m]` and `g` is `[k,n]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], g: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let g_row = &g[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// `out[m,k] += g · bᵀ` where `g` is `[m,n]` and `b` is `[k,n]`.
pub(crate) fn matmul_a_bt_acc(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// General axis permutation: `out` axis `d` is input axis `perm[d]`.
pub(crate) fn permute_raw(t: &Tensor, perm: &[usize]) -> Tensor {
    let in_strides = t.strides();
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
    let n = t.data.len();
    let mut out = Vec::with_capacity(n);
    let ndim = out_shape.len();
    let mut idx = vec![0usize; ndim];
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    for _ in 0..n {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(t.data[off]);
        for d in (0..ndim).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor {
        shape: out_shape,
        data: out,
    }
}

/// Split a shape around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
