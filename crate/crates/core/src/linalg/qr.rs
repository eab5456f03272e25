//! Householder QR with column pivoting.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{IvError, Result};

/// Relative tolerance for declaring a pivot column numerically dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Rank-revealing factorization `A[:, retained] = Q R`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Orthonormal basis of the retained column span, `N × r`.
    pub basis: Array2<f64>,
    /// Upper-triangular factor, `r × r`, columns in pivot order.
    pub r: Array2<f64>,
    /// Indices of the retained columns of `A`, in pivot order.
    pub retained: Vec<usize>,
}

impl PivotedQr {
    pub fn rank(&self) -> usize {
        self.retained.len()
    }

    /// Solves `R c = Q' v`, i.e. least-squares coefficients on the retained columns.
    pub fn coefficients(&self, v: &[f64]) -> Array1<f64> {
        let qtv = self.basis.t().dot(&ndarray::ArrayView1::from(v));
        back_substitute(&self.r, qtv)
    }
}

/// Solves the upper-triangular system `R x = b` in place.
pub fn back_substitute(r: &Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
    let k = r.nrows();
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in i + 1..k {
            s -= r[[i, j]] * b[j];
        }
        b[i] = s / r[[i, i]];
    }
    b
}

/// Factorizes `a` (N × K) with greedy column pivoting.
///
/// A column is dropped once its remaining norm falls below
/// `RANK_TOLERANCE` times the largest original column norm.
pub fn pivoted_qr(a: ArrayView2<f64>) -> Result<PivotedQr> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(IvError::NonFinite { what: "matrix" });
    }
    let (n, k) = a.dim();
    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| a.column(j).to_vec()).collect();
    let mut perm: Vec<usize> = (0..k).collect();
    let max_norm = cols.iter().map(|c| norm(c)).fold(0.0_f64, f64::max);
    let tol = RANK_TOLERANCE * max_norm;

    let mut reflectors: Vec<Vec<f64>> = Vec::new();
    let mut rank = 0;
    let steps = n.min(k);
    if max_norm > 0.0 {
        for step in 0..steps {
            // pick the remaining column with the largest trailing norm
            let (best, best_norm) =
                (step..k)
                    .map(|j| (j, norm(&cols[j][step..])))
                    .fold(
                        (step, -1.0),
                        |acc, cur| if cur.1 > acc.1 { cur } else { acc },
                    );
            if best_norm <= tol {
                break;
            }
            cols.swap(step, best);
            perm.swap(step, best);

            let x = &cols[step][step..];
            let alpha = if x[0] >= 0.0 { -best_norm } else { best_norm };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vnorm = norm(&v);
            if vnorm > 0.0 {
                v.iter_mut().for_each(|e| *e /= vnorm);
            }
            cols[step][step] = alpha;
            cols[step][step + 1..].iter_mut().for_each(|e| *e = 0.0);
            for col in cols.iter_mut().skip(step + 1) {
                apply_reflector(&v, &mut col[step..]);
            }
            reflectors.push(v);
            rank += 1;
        }
    }

    let mut r = Array2::<f64>::zeros((rank, rank));
    for j in 0..rank {
        for i in 0..=j {
            r[[i, j]] = cols[j][i];
        }
    }

    // Thin Q from the stored reflectors.
    let mut qcols: Vec<Vec<f64>> = (0..rank)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for (step, v) in reflectors.iter().enumerate().rev() {
        for q in qcols.iter_mut() {
            apply_reflector(v, &mut q[step..]);
        }
    }
    let mut basis = Array2::<f64>::zeros((n, rank));
    for (j, q) in qcols.iter().enumerate() {
        for (i, val) in q.iter().enumerate() {
            basis[[i, j]] = *val;
        }
    }

    Ok(PivotedQr {
        basis,
        r,
        retained: perm[..rank].to_vec(),
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// x <- (I - 2 v v') x for unit v
fn apply_reflector(v: &[f64], x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let s = 2.0 * dot;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

/// Solves the dense square system `a x = b` by LU with partial pivoting.
pub fn lu_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(IvError::Dimension(format!(
            "lu_solve: {}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut lu: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut rhs = b.to_vec();
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(IvError::Singular);
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| lu[i][col].abs().total_cmp(&lu[j][col].abs()))
            .unwrap_or(col);
        if lu[piv][col].abs() <= 1e-12 * scale {
            return Err(IvError::Singular);
        }
        lu.swap(col, piv);
        rhs.swap(col, piv);
        let (top, bottom) = lu.split_at_mut(col + 1);
        let pivot_row = &top[col];
        let d = pivot_row[col];
        for (off, row) in bottom.iter_mut().enumerate() {
            let f = row[col] / d;
            if f != 0.0 {
                row[col] = f;
                for c in col + 1..n {
                    row[c] -= f * pivot_row[c];
                }
                rhs[col + 1 + off] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= lu[i][j] * x[j];
        }
        x[i] = s / lu[i][i];
    }
    Ok(Array1::from(x))
}

/// Determinant and inverse of a small (≤ 3) symmetric block.
pub(crate) fn small_inverse(m: &[[f64; 3]; 3], size: usize) -> Option<(f64, [[f64; 3]; 3])> {
    let mut inv = [[0.0; 3]; 3];
    match size {
        0 => Some((1.0, inv)),
        1 => {
            let d = m[0][0];
            inv[0][0] = 1.0 / d;
            Some((d, inv))
        }
        2 => {
            let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            inv[0][0] = m[1][1] / d;
            inv[1][1] = m[0][0] / d;
            inv[0][1] = -m[0][1] / d;
            inv[1][0] = -m[1][0] / d;
            Some((d, inv))
        }
        3 => {
            let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
            let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
            let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
            let d = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
            inv[0][0] = c00 / d;
            inv[1][0] = c01 / d;
            inv[2][0] = c02 / d;
            inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
            inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
            inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
            inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
            inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
            inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
            Some((d, inv))
        }
        _ => None,
    }
}
