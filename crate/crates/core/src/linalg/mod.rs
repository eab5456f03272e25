//! Projection matrices, hat values, residualization and leave-out downdates.

mod bundle;
mod leave_out;
pub mod qr;

pub use bundle::{
    balance_check, build_projection, cross_fit_weights, residualize, BalanceReport, Projection,
    ProjectionBundle, IDEMPOTENCY_TOLERANCE, MIN_ANNIHILATOR_DIAGONAL,
};
pub use leave_out::{leave_out, LeaveOut};

use ndarray::{Array2, ArrayView1};

/// `Σ_{i≠j} a_i B_ij b_j` for a dense square matrix.
pub fn off_diagonal_form(b: &Array2<f64>, left: ArrayView1<f64>, right: ArrayView1<f64>) -> f64 {
    let mut total = 0.0;
    for (i, row) in b.outer_iter().enumerate() {
        let s = row.dot(&right) - row[i] * right[i];
        total += left[i] * s;
    }
    total
}

/// `Σ_{i,j} a_i B_ij b_j`.
pub fn full_form(b: &Array2<f64>, left: ArrayView1<f64>, right: ArrayView1<f64>) -> f64 {
    left.dot(&b.dot(&right))
}
