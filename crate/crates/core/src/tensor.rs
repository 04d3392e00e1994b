//! Dense row-major f64 tensors and the pure (untracked) forward kernels.
//!
//! Tensors are rank-1 vectors or rank-2 matrices. A tensor optionally carries
//! a handle onto a [`crate::tape::Tape`] node; handles are only meaningful for
//! the tape that issued them. The pure methods here never record anything and
//! are shared as kernels by the tape.

use std::sync::Arc;

use thiserror::Error;

use crate::tape::NodeId;

/// Norm threshold below which a vector counts as degenerate.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("vector norm is below {NORM_EPS:e}, cannot normalize")]
    DegenerateVector,
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("sqrt of negative value {0}")]
    NegativeSqrt(f64),
    #[error("tensor is not tracked on a tape")]
    NotTracked,
}

/// Dense tensor of 64-bit floats, row-major.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    ///
    /// Panics if `product(shape) != data.len()`; construction errors are
    /// programming errors, not runtime conditions.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {shape:?} vs {} values",
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            data: Arc::new(vec![0.0; numel]),
            shape,
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor::new(vec![values.len()], values.to_vec())
    }

    /// Rank-2 tensor from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    /// Rank-2 tensor from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for in-place parameter updates; any tape handle is
    /// dropped since the stored value no longer matches the recorded one.
    /// Copies the buffer first if a tape still shares it.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.node = None;
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count: rank-2 rows, rank-1 is a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Column count: rank-2 cols, rank-1 length.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("rows/cols on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on multi-element tensor");
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub(crate) fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    /// Strip any tape handle, keeping only the value; the buffer is shared.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // --- pure forward ops (no tape recording) ---

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = mat_dims(self, "matmul")?;
        let (k2, n) = mat_dims(other, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self, other));
        }
        Ok(Tensor::matrix(
            m,
            n,
            mm_nn(&self.data, m, k, &other.data, n),
        ))
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = mat_dims(self, "matmul_nt")?;
        let (n, k2) = mat_dims(other, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self, other));
        }
        Ok(Tensor::matrix(
            m,
            n,
            mm_nt(&self.data, m, k, &other.data, n),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        zip_elementwise("add", self, other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        zip_elementwise("sub", self, other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        zip_elementwise("mul", self, other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| v * factor).collect()),
            node: None,
        }
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| v.max(0.0)).collect()),
            node: None,
        }
    }

    /// L2-normalize: a rank-1 tensor as one vector, a rank-2 tensor row-wise.
    pub fn l2_normalize(&self) -> Result<Tensor, TensorError> {
        let (data, _norms) = normalize_rows(&self.data, self.rows(), self.cols())?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            node: None,
        })
    }

    /// Stable log-sum-exp over all elements.
    pub fn logsumexp(&self) -> Result<f64, TensorError> {
        logsumexp_slice(&self.data)
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor, TensorError> {
        let rows = self.rows();
        let cols = self.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, rows });
            }
            data.extend_from_slice(&self.data[i * cols..(i + 1) * cols]);
        }
        let shape = match self.shape.len() {
            2 => vec![indices.len(), cols],
            _ => vec![indices.len()],
        };
        Ok(Tensor::new(shape, data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> Result<f64, TensorError> {
        if self.data.is_empty() {
            return Err(TensorError::EmptyInput("mean"));
        }
        Ok(self.sum() / self.data.len() as f64)
    }

    pub fn square(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| v * v).collect()),
            node: None,
        }
    }

    pub fn sqrt(&self) -> Result<Tensor, TensorError> {
        for &v in self.data.iter() {
            if v < 0.0 {
                return Err(TensorError::NegativeSqrt(v));
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| v.sqrt()).collect()),
            node: None,
        })
    }

    /// Frobenius inner product of two same-shape tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64, TensorError> {
        if self.shape != other.shape {
            return Err(shape_err("dot", self, other));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape.to_vec(),
        right: b.shape.to_vec(),
    }
}

/// Interpret a tensor as a matrix: rank-2 as-is, rank-1 as a single row.
pub(crate) fn mat_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize), TensorError> {
    match t.shape.len() {
        2 => Ok((t.shape[0], t.shape[1])),
        1 => Ok((1, t.shape[0])),
        _ => Err(TensorError::ShapeMismatch {
            op,
            left: t.shape.to_vec(),
            right: vec![],
        }),
    }
}

fn zip_elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    if a.shape != b.shape {
        return Err(shape_err(op, a, b));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: Arc::new(
            a.data
                .iter()
                .zip(b.data.iter())
                .map(|(x, y)| f(*x, *y))
                .collect(),
        ),
        node: None,
    })
}

// --- shared kernels, also used by the tape forward/backward passes ---

/// C[m,n] = A[m,k] · B[k,n]
pub(crate) fn mm_nn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// C[m,n] = A[m,k] · B[n,k]ᵀ
pub(crate) fn mm_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// C[k,n] = A[m,k]ᵀ · B[m,n]
pub(crate) fn mm_tn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = arow[p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// Row-wise L2 normalization; returns normalized data and per-row norms.
pub(crate) fn normalize_rows(
    data: &[f64],
    rows: usize,
    cols: usize,
) -> Result<(Vec<f64>, Vec<f64>), TensorError> {
    let mut out = vec![0.0; data.len()];
    let mut norms = vec![0.0; rows];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= NORM_EPS {
            return Err(TensorError::DegenerateVector);
        }
        norms[r] = norm;
        for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = v / norm;
        }
    }
    Ok((out, norms))
}

pub(crate) fn logsumexp_slice(values: &[f64]) -> Result<f64, TensorError> {
    if values.is_empty() {
        return Err(TensorError::EmptyInput("logsumexp"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Softmax of a slice, max-shifted for stability.
pub(crate) fn softmax_slice(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Central-difference gradient of a scalar function, one coordinate at a time:
/// `(f(x + h·e_k) − f(x − h·e_k)) / (2h)`. This only re-runs forward passes,
/// so it stays independent of the backward implementation it is used to check.
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.detach();
    for k in 0..x.numel() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        grad[k] = (up - down) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}
