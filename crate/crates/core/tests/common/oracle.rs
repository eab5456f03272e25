//! Brute-force reference implementations: explicit refits, plain double and
//! triple sums and a Gauss–Jordan solver. Nothing here shares code with the
//! library beyond the array type.

#![allow(dead_code)]

use manyiv_core::ndarray::{Array1, Array2, ArrayView1};

/// Solves `A X = B` by Gauss–Jordan elimination with partial pivoting.
pub fn solve(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = Array2::zeros((n, n + m));
    for i in 0..n {
        for j in 0..n {
            aug[[i, j]] = a[[i, j]];
        }
        for j in 0..m {
            aug[[i, n + j]] = b[[i, j]];
        }
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&r, &s| aug[[r, c]].abs().total_cmp(&aug[[s, c]].abs()))?;
        if aug[[piv, c]].abs() < 1e-300 {
            return None;
        }
        for j in 0..n + m {
            aug.swap([c, j], [piv, j]);
        }
        let d = aug[[c, c]];
        for j in 0..n + m {
            aug[[c, j]] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = aug[[r, c]];
                if f != 0.0 {
                    for j in 0..n + m {
                        aug[[r, j]] -= f * aug[[c, j]];
                    }
                }
            }
        }
    }
    Some(Array2::from_shape_fn((n, m), |(i, j)| aug[[i, n + j]]))
}

pub fn identity(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

/// `(Σ_{l kept} z_l z_l')⁻¹`.
pub fn gram_inverse(z: &Array2<f64>, keep: &[bool]) -> Array2<f64> {
    let k = z.ncols();
    let mut g = Array2::zeros((k, k));
    for (l, row) in z.rows().into_iter().enumerate() {
        if keep[l] {
            for a in 0..k {
                for b in 0..k {
                    g[[a, b]] += row[a] * row[b];
                }
            }
        }
    }
    solve(&g, &identity(k)).expect("reduced design lost rank")
}

/// `Z (Z'Z)⁻¹ Z'`.
pub fn projection(z: &Array2<f64>) -> Array2<f64> {
    let g = gram_inverse(z, &vec![true; z.nrows()]);
    z.dot(&g).dot(&z.t())
}

pub fn annihilator(z: &Array2<f64>) -> Array2<f64> {
    identity(z.nrows()) - projection(z)
}

/// OLS coefficients of `v` on the kept rows of `z`.
pub fn coefficients(z: &Array2<f64>, v: ArrayView1<f64>, keep: &[bool]) -> Array1<f64> {
    let g = gram_inverse(z, keep);
    let mut zv = Array1::zeros(z.ncols());
    for (l, row) in z.rows().into_iter().enumerate() {
        if keep[l] {
            zv.scaled_add(v[l], &row);
        }
    }
    g.dot(&zv)
}

pub fn keep_all_but(n: usize, drop: &[usize]) -> Vec<bool> {
    (0..n).map(|i| !drop.contains(&i)).collect()
}

/// `z_a' (Σ_{l∉S} z_l z_l')⁻¹ z_b`.
pub fn leave_out_projection(z: &Array2<f64>, drop: &[usize], a: usize, b: usize) -> f64 {
    let g = gram_inverse(z, &keep_all_but(z.nrows(), drop));
    z.row(a).dot(&g.dot(&z.row(b)))
}

/// `v_j − z_j' δ̂_{−S}`.
pub fn leave_out_residual(z: &Array2<f64>, v: ArrayView1<f64>, drop: &[usize], j: usize) -> f64 {
    let d = coefficients(z, v, &keep_all_but(z.nrows(), drop));
    v[j] - z.row(j).dot(&d)
}

/// `Σ_{i≠j} u_i B_ij v_j`.
pub fn offdiag(b: &Array2<f64>, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += u[i] * b[[i, j]] * v[j];
            }
        }
    }
    s
}

/// `Σ_{i,j} u_i B_ij v_j`.
pub fn full(b: &Array2<f64>, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += u[i] * b[[i, j]] * v[j];
        }
    }
    s
}

pub fn tsls(p: &Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    full(p, x, y) / full(p, x, x)
}

pub fn jive2(p: &Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    offdiag(p, x, y) / offdiag(p, x, x)
}

/// Constructed instrument from explicit leave-one-out first-stage refits.
pub fn jive1(z: &Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let n = z.nrows();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let pi = coefficients(z, x, &keep_all_but(n, &[i]));
        let zstar = z.row(i).dot(&pi);
        num += zstar * y[i];
        den += zstar * x[i];
    }
    num / den
}

/// `M_W Z` with `M_W` formed explicitly.
pub fn partial_out(z: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    annihilator(w).dot(z)
}

pub fn beta1(
    p_perp: &Array2<f64>,
    m_w: &Array2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> f64 {
    let xp = m_w.dot(&x);
    let yp = m_w.dot(&y);
    offdiag(p_perp, xp.view(), yp.view()) / offdiag(p_perp, xp.view(), xp.view())
}

pub fn beta2(p_perp: &Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    offdiag(p_perp, x, y) / offdiag(p_perp, x, x)
}

/// `θ = (M_W∘M_W)⁻¹ diag(P⊥)` and `A = M_W (P⊥ − D_θ) M_W`.
pub fn zero_diag_a(p_perp: &Array2<f64>, m_w: &Array2<f64>) -> Option<(Array1<f64>, Array2<f64>)> {
    let n = p_perp.nrows();
    let had = m_w.mapv(|v| v * v);
    let rhs = Array2::from_shape_fn((n, 1), |(i, _)| p_perp[[i, i]]);
    let theta = solve(&had, &rhs)?.column(0).to_owned();
    let d = Array2::from_shape_fn((n, n), |(i, j)| if i == j { theta[i] } else { 0.0 });
    let a = m_w.dot(&(p_perp - &d)).dot(m_w);
    Some((theta, a))
}

pub fn beta3(a: &Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    full(a, x, y) / full(a, x, x)
}

pub fn phi1(p: &Array2<f64>, e: ArrayView1<f64>, k: f64) -> f64 {
    let n = e.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += p[[i, j]].powi(2) * e[i].powi(2) * e[j].powi(2);
            }
        }
    }
    2.0 / k * s
}

/// `Σ_{i≠j} or Σ_{i,j}` of `B_ij² / (M_ii M_jj + M_ij²) · e_i M_i e · e_j M_j e`.
fn cross_fit(b: &Array2<f64>, m: &Array2<f64>, e: ArrayView1<f64>, k: f64, skip_diag: bool) -> f64 {
    let n = e.len();
    let me: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|l| m[[i, l]] * e[l]).sum())
        .collect();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if skip_diag && i == j {
                continue;
            }
            let w = b[[i, j]].powi(2) / (m[[i, i]] * m[[j, j]] + m[[i, j]].powi(2));
            s += w * e[i] * me[i] * e[j] * me[j];
        }
    }
    2.0 / k * s
}

pub fn phi2(p: &Array2<f64>, m: &Array2<f64>, e: ArrayView1<f64>, k: f64) -> f64 {
    cross_fit(p, m, e, k, true)
}

pub fn phi_w(a: &Array2<f64>, m_zw: &Array2<f64>, e: ArrayView1<f64>, k: f64) -> f64 {
    cross_fit(a, m_zw, e, k, false)
}

/// Leave-three-out estimator with every downdate refit from scratch.
pub fn phi3(z: &Array2<f64>, e: ArrayView1<f64>) -> f64 {
    let n = z.nrows();
    let k = z.ncols() as f64;
    let p = projection(z);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j || p[[i, j]] == 0.0 {
                continue;
            }
            let g = gram_inverse(z, &keep_all_but(n, &[i, j]));
            let mut inner = 0.0;
            for kk in 0..n {
                if kk == j {
                    continue;
                }
                let m_ik = if kk == i {
                    1.0
                } else {
                    -z.row(i).dot(&g.dot(&z.row(kk)))
                };
                let drop: Vec<usize> = if kk == i { vec![i, j] } else { vec![i, j, kk] };
                inner += m_ik * e[kk] * leave_out_residual(z, e, &drop, j);
            }
            total += p[[i, j]].powi(2) * e[i] * e[j] * inner;
        }
    }
    2.0 / k * total
}

/// `Σ_{j≠i} P_ij X_j`.
pub fn loo_fit(p: &Array2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    let n = x.len();
    Array1::from_shape_fn(n, |i| {
        (0..n).filter(|&j| j != i).map(|j| p[[i, j]] * x[j]).sum()
    })
}

pub fn psi1(p: &Array2<f64>, e: ArrayView1<f64>, x: ArrayView1<f64>, k: f64) -> f64 {
    let n = e.len();
    let fit = loo_fit(p, x);
    let mut first = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        first += e[i].powi(2) * fit[i].powi(2);
        for j in 0..n {
            if i != j {
                second += p[[i, j]].powi(2) * x[i] * e[i] * x[j] * e[j];
            }
        }
    }
    (first + second) / k
}

pub fn psi2(
    p: &Array2<f64>,
    m: &Array2<f64>,
    e: ArrayView1<f64>,
    x: ArrayView1<f64>,
    k: f64,
) -> f64 {
    let n = e.len();
    let fit = loo_fit(p, x);
    let me: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|l| m[[i, l]] * e[l]).sum())
        .collect();
    let mut first = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        first += e[i] * me[i] / m[[i, i]] * fit[i].powi(2);
        for j in 0..n {
            if i != j {
                let w = p[[i, j]].powi(2) / (m[[i, i]] * m[[j, j]] + m[[i, j]].powi(2));
                second += w * x[i] * me[i] * x[j] * me[j];
            }
        }
    }
    (first + second) / k
}

/// `|a − b| ≤ tol · max(|a|, |b|)`, or both below `floor` in magnitude.
pub fn close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    let d = (a - b).abs();
    d <= tol * a.abs().max(b.abs()) || (a.abs() <= floor && b.abs() <= floor)
}
