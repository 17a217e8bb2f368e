//! Dense matrices with tape-based reverse-mode differentiation.
//!
//! Every value is a row-major `rows × cols` matrix of `f64`. A [`Tape`]
//! records operations on [`Var`] handles during a forward pass and
//! replays them in reverse to compute gradients. Learnable weights live in
//! a [`ParameterStore`], are copied onto the tape for each forward pass and
//! receive their gradients back after [`Tape::backward`].
//!
//! ```
//! use cadlab_core::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(1, 1, vec![3.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

mod store;
mod tape;

pub use store::{Optimizer, Param, ParameterStore};
pub use tape::{Gradients, OpKind, Tape, Var};

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Lower clamp applied to probabilities before `log` and `pow`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("buffer of length {len} does not fill shape {shape}")]
    BadBuffer { shape: Shape, len: usize },
    #[error("{op}: index {index} out of range for {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("pow: exponent {0} outside (0, 1]")]
    BadExponent(f64),
    #[error("pow: input {0} outside (0, 1]")]
    PowDomain(f64),
    #[error("backward: loss must be a 1x1 tensor, got {0}")]
    NonScalarLoss(Shape),
    #[error("backward: loss is not connected to any differentiable input")]
    DetachedLoss,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(alloc::string::String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(alloc::string::String),
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(alloc::string::String),
}

/// Matrix dimensions, rows first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub const fn numel(self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.rows, self.cols)
    }
}

/// An immutable dense matrix value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = Shape::new(rows, cols);
        if data.len() != shape.numel() {
            return Err(TensorError::BadBuffer {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: Shape::new(1, cols),
                    rhs: Shape::new(1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::from_vec(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: Shape::new(rows, cols),
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: Shape::new(rows, cols),
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(1, 1, value)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape.cols;
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape.cols + c]
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn transpose(&self) -> Tensor {
        let Shape { rows, cols } = self.shape;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = self.data[r * cols + c];
            }
        }
        Tensor {
            shape: Shape::new(cols, rows),
            data: out,
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols() != other.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(Tensor {
            shape: Shape::new(self.rows(), other.cols()),
            data: matmul_raw(&self.data, &other.data, self.rows(), self.cols(), other.cols()),
        })
    }
}

/// `(n × k) · (k × m)` on raw row-major buffers.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_short_buffer() {
        let err = Tensor::from_vec(2, 3, vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::BadBuffer { len: 5, .. }));
    }

    #[test]
    fn transpose_round_trips() {
        let t = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(t.transpose().transpose(), t);
        assert_eq!(t.transpose().get(2, 1), 6.0);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let a = Tensor::from_rows(&[[1.0, -2.0], [0.5, 3.0], [7.0, 0.0]]).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_names_offending_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        let msg = alloc::format!("{}", a.matmul(&b).unwrap_err());
        assert!(msg.contains("[2, 3]"), "{msg}");
    }
}
