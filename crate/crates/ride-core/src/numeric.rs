//! Shared numeric primitives: stable softmax and sigmoid.

use alloc::vec::Vec;

// In no_std builds the math methods come from this trait; it also settles
// numeric-literal inference in the test modules, so it stays unconditional.
use num_traits::Float;

use crate::grid::ValueGrid;

/// Row-wise softmax with max subtraction; each output row sums to 1.
pub(crate) fn softmax_rows(logits: &ValueGrid) -> ValueGrid {
    let cols = logits.cols();
    let mut out = Vec::with_capacity(logits.rows() * cols);
    for row in logits.iter_rows() {
        softmax_into(row, &mut out);
    }
    ValueGrid::matrix(logits.rows(), cols, out).expect("softmax of finite logits is finite")
}

/// Appends the softmax of `row` to `out`.
pub(crate) fn softmax_into(row: &[f64], out: &mut Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for &v in row {
        let e = (v - max).exp();
        sum += e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v /= sum;
    }
}

/// `log(sum(exp(row)))`, max-subtracted.
pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
