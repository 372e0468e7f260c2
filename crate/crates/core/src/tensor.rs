//! Dense row-major float tensor.

use crate::error::{Error, Result};

/// A dense tensor of 32-bit floats in row-major order.
///
/// Construction validates that `dims` multiply out to the data length and
/// that every value is finite, so downstream numeric code can rely on both.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || expected != data.len() {
            return Err(Error::LengthMismatch {
                what: "tensor data",
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Number of rows, treating the first dimension as the batch axis.
    pub fn n_rows(&self) -> usize {
        self.dims[0]
    }

    /// Product of all dimensions after the first.
    pub fn row_width(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_width();
        &self.data[i * w..(i + 1) * w]
    }
}
