//! Dense row-major `f64` arrays with validated shapes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Dense row-major array of `f64` values with an explicit shape.
///
/// The single numeric currency of the crate: batches, logits, probabilities,
/// and gradients all travel as grids. Construction checks that the element
/// count matches the shape product and that every value is finite, so code
/// holding a grid may assume both.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ValueGrid {
    /// Builds a grid after validating shape and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::Shape(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Numeric(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a rank-2 grid of `rows x cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Zero-filled rank-2 grid.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// First dimension. Grids in this crate are rank 2 (instances x features).
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() requires a rank-2 grid");
        self.shape[0]
    }

    /// Second dimension of a rank-2 grid.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() requires a rank-2 grid");
        self.shape[1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the flat data. Callers must keep values finite;
    /// every public operation revalidates on construction of new grids.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Borrows row `r` of a rank-2 grid.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        assert!(r < self.rows(), "row {r} out of range ({} rows)", self.rows());
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        assert!(c < self.cols(), "col {c} out of range ({} cols)", self.cols());
        self.row(r)[c]
    }

    /// Iterates rows of a rank-2 grid.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        let cols = self.cols();
        self.data.chunks_exact(cols)
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_product() {
        let err = ValueGrid::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, CoreError::Shape(_)));
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = ValueGrid::matrix(1, 2, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, CoreError::Numeric(_)));
        let err = ValueGrid::matrix(1, 2, vec![f64::INFINITY, 0.0]).unwrap_err();
        assert!(matches!(err, CoreError::Numeric(_)));
    }

    #[test]
    fn row_access_is_row_major() {
        let g = ValueGrid::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(g.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(g.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(g.at(1, 2), 6.0);
        assert_eq!(g.rows(), 2);
        assert_eq!(g.cols(), 3);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn row_out_of_range_panics() {
        let g = ValueGrid::zeros(2, 2);
        g.row(2);
    }
}
