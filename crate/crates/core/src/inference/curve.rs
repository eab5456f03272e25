//! Test statistics as explicit functions of the hypothesized value.
//!
//! With `e(b) = Y − bX` every numerator is a polynomial of degree ≤ 2 in `b`
//! and every normalizer is a polynomial of degree ≤ 4. A handful of
//! quadratic forms (five evaluations for the leave-three-out normalizer)
//! give the statistic at any `b` in constant time.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::statistics::check_sizes;
use super::zero_diag::ZeroDiagA;
use super::TestId;
use crate::data::Dataset;
use crate::error::{IvError, Result};
use crate::linalg::{off_diagonal_form, ProjectionBundle};
use crate::variance::{leave_one_out_fit, VarianceId, VARIANCE_FLOOR};

/// Coefficients (ascending powers of `b`) of a test statistic's pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticCurve {
    pub test: TestId,
    pub variance: VarianceId,
    pub k: usize,
    pub numerator: [f64; 3],
    pub normalizer: [f64; 5],
    /// Scale of the normalizer; the degeneracy floor is a multiple of it.
    pub scale: [f64; 5],
}

pub(crate) fn horner(c: &[f64], b: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * b + v)
}

/// `Σ_{p,q} b^{p+q} s_p' W s_q` for `s(b) = s0 + b s1 + b² s2`.
fn quartic_form(w: &Array2<f64>, s: [&Array1<f64>; 3], factor: f64) -> [f64; 5] {
    let ws: Vec<Array1<f64>> = s.iter().map(|v| w.dot(*v)).collect();
    let mut out = [0.0; 5];
    for p in 0..3 {
        for q in 0..3 {
            out[p + q] += factor * s[p].dot(&ws[q]);
        }
    }
    out
}

/// Pieces of `e_i (M e)_i` as a quadratic in `b`, given `a = Y`, `c = X`.
fn cross_products(
    m: Option<&Array2<f64>>,
    a: ArrayView1<f64>,
    c: ArrayView1<f64>,
) -> [Array1<f64>; 3] {
    let (ma, mc) = match m {
        Some(m) => (m.dot(&a), m.dot(&c)),
        None => (a.to_owned(), c.to_owned()),
    };
    [&a * &ma, -(&(&a * &mc) + &(&c * &ma)), &c * &mc]
}

fn mean_square_poly(a: ArrayView1<f64>, c: ArrayView1<f64>) -> [f64; 3] {
    let n = a.len() as f64;
    [a.dot(&a) / n, -2.0 * a.dot(&c) / n, c.dot(&c) / n]
}

fn poly_mul(p: &[f64], q: &[f64]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// The leave-three-out normalizer multiplies four factors linear in `e`, so
/// it is a quartic in `b`; five evaluations determine it. Nodes sit at
/// `c + s·t`, `t = −2..2`, around the OLS ratio `c`.
fn phi3_quartic(
    y: ArrayView1<f64>,
    x: ArrayView1<f64>,
    bundle: &ProjectionBundle,
) -> Result<[f64; 5]> {
    let xx = x.dot(&x);
    let c = if xx > 0.0 { x.dot(&y) / xx } else { 0.0 };
    let r = &y - &(&x * c);
    let s = if xx > 0.0 {
        (r.dot(&r) / xx).sqrt()
    } else {
        1.0
    };
    let s = s.max(1e-8 * (1.0 + c.abs()));
    let mut vander = Array2::zeros((5, 5));
    let mut values = Array1::zeros(5);
    for (row, t) in (-2..=2).enumerate() {
        let t = t as f64;
        for d in 0..5 {
            vander[[row, d]] = t.powi(d as i32);
        }
        let e = &y - &(&x * (c + s * t));
        values[row] = crate::variance::phi3(e.view(), bundle)?.raw;
    }
    let in_t = crate::linalg::qr::lu_solve(&vander, &values)?;
    // expand Σ a_d ((b − c)/s)^d in powers of b
    let mut out = [0.0; 5];
    for (d, a) in in_t.iter().enumerate() {
        let mut binom = 1.0;
        for p in 0..=d {
            out[p] += a * binom * (-c).powi((d - p) as i32) / s.powi(d as i32);
            binom = binom * (d - p) as f64 / (p + 1) as f64;
        }
    }
    Ok(out)
}

impl StatisticCurve {
    /// Precomputes the coefficients of `test` with the given normalizer.
    pub fn new(
        test: TestId,
        variance: Option<VarianceId>,
        data: &Dataset,
        bundle: &ProjectionBundle,
        a: Option<&ZeroDiagA>,
    ) -> Result<Self> {
        check_sizes(data, bundle)?;
        let k = bundle.k_z();
        let kf = k as f64;
        let (y, x) = (data.y(), data.x());
        let ms = mean_square_poly(y, x);
        let phi_scale = poly_mul(&ms, &ms);
        let unsupported = |v: VarianceId| {
            Err(IvError::Unsupported(format!(
                "{v} has no closed-form curve for {test}"
            )))
        };
        let no_controls = || {
            if data.has_controls() {
                Err(IvError::Unsupported(format!(
                    "{test} is defined without controls"
                )))
            } else {
                Ok(())
            }
        };
        match test {
            TestId::Ar | TestId::ArResidualized | TestId::ArRaw | TestId::ArW => {
                let variance = variance.unwrap_or(match test {
                    TestId::ArW => VarianceId::PhiW,
                    _ => VarianceId::Phi2,
                });
                let (num_y, num_x) = if test == TestId::ArResidualized {
                    (
                        bundle.residualize_controls(y),
                        bundle.residualize_controls(x),
                    )
                } else {
                    (y.to_owned(), x.to_owned())
                };
                let numerator = if test == TestId::ArW {
                    let a = a.ok_or_else(|| IvError::Unsupported("arw needs A".into()))?;
                    a.check_against(data.w())?;
                    let m = a.matrix();
                    let (ay, ax) = (m.dot(&num_y), m.dot(&num_x));
                    [ay.dot(&num_y), -2.0 * ay.dot(&num_x), ax.dot(&num_x)]
                } else {
                    if test == TestId::Ar {
                        no_controls()?;
                    }
                    let p = bundle.p();
                    let (yv, xv) = (num_y.view(), num_x.view());
                    [
                        off_diagonal_form(p, yv, yv),
                        -2.0 * off_diagonal_form(p, yv, xv),
                        off_diagonal_form(p, xv, xv),
                    ]
                };
                let normalizer = match (test, variance) {
                    (TestId::Ar, VarianceId::Phi1) => {
                        let s = cross_products(None, y, x);
                        quartic_form(bundle.squared_offdiag(), [&s[0], &s[1], &s[2]], 2.0 / kf)
                    }
                    (TestId::ArW, VarianceId::PhiW) => {
                        let a = a.expect("checked above");
                        let w = a.cross_fit_weights(bundle)?;
                        let s = cross_products(Some(bundle.m()), y, x);
                        quartic_form(w, [&s[0], &s[1], &s[2]], 2.0 / kf)
                    }
                    (TestId::Ar | TestId::ArResidualized | TestId::ArRaw, VarianceId::Phi2) => {
                        let w = bundle.cross_fit_weights()?;
                        let s = cross_products(Some(bundle.m()), y, x);
                        quartic_form(w, [&s[0], &s[1], &s[2]], 2.0 / kf)
                    }
                    (TestId::Ar, VarianceId::Phi3) => phi3_quartic(y, x, bundle)?,
                    (_, v) => return unsupported(v),
                };
                Ok(StatisticCurve {
                    test,
                    variance,
                    k,
                    numerator,
                    normalizer,
                    scale: phi_scale,
                })
            }
            TestId::Lm => {
                no_controls()?;
                let variance = variance.unwrap_or(VarianceId::Psi2);
                let fit = leave_one_out_fit(bundle, x);
                let numerator = [y.dot(&fit), -x.dot(&fit), 0.0];
                let f2 = &fit * &fit;
                let (first, g0, g1, w) = match variance {
                    VarianceId::Psi1 => {
                        let s = cross_products(None, y, x);
                        let g0 = &x * &y;
                        let g1 = -(&x * &x);
                        (s, g0, g1, bundle.squared_offdiag())
                    }
                    VarianceId::Psi2 => {
                        let w = bundle.cross_fit_weights()?;
                        let m = bundle.m();
                        let s = cross_products(Some(m), y, x);
                        let md = bundle.m_diag();
                        let s = s.map(|v| &v / md);
                        let g0 = &x * &m.dot(&y);
                        let g1 = -(&x * &m.dot(&x));
                        (s, g0, g1, w)
                    }
                    v => return unsupported(v),
                };
                let mut normalizer = [0.0; 5];
                for d in 0..3 {
                    normalizer[d] += first[d].dot(&f2) / kf;
                }
                let zero = Array1::zeros(x.len());
                let second = quartic_form(w, [&g0, &g1, &zero], 1.0 / kf);
                for d in 0..5 {
                    normalizer[d] += second[d];
                }
                let xs = x.dot(&x) / x.len() as f64;
                let scale = [ms[0] * xs, ms[1] * xs, ms[2] * xs, 0.0, 0.0];
                Ok(StatisticCurve {
                    test,
                    variance,
                    k,
                    numerator,
                    normalizer,
                    scale,
                })
            }
        }
    }

    pub fn numerator_at(&self, b: f64) -> f64 {
        horner(&self.numerator, b)
    }

    pub fn normalizer_at(&self, b: f64) -> f64 {
        horner(&self.normalizer, b)
    }

    pub fn floor_at(&self, b: f64) -> f64 {
        let s = horner(&self.scale, b);
        if s > 0.0 && s.is_finite() {
            VARIANCE_FLOOR * s
        } else {
            VARIANCE_FLOOR
        }
    }

    /// Statistic at `b`, or `None` when the normalizer is degenerate.
    pub fn statistic_at(&self, b: f64) -> Option<f64> {
        let v = self.normalizer_at(b);
        if !(v > self.floor_at(b)) {
            return None;
        }
        Some(self.numerator_at(b) / (self.k as f64 * v).sqrt())
    }

    /// Non-rejection at `b` against the critical value `crit`.
    pub fn accepts(&self, b: f64, crit: f64) -> bool {
        match self.statistic_at(b) {
            None => true,
            Some(s) => match self.test.sidedness() {
                super::Sidedness::OneSidedUpper => s <= crit,
                super::Sidedness::TwoSided => s.abs() <= crit,
            },
        }
    }

    /// Polynomials whose real roots contain every point where the
    /// acceptance status can change.
    pub(crate) fn breakpoint_polynomials(&self, crit: f64) -> Vec<Vec<f64>> {
        let kf = self.k as f64;
        let num2 = poly_mul(&self.numerator, &self.numerator);
        let boundary: Vec<f64> = (0..5)
            .map(|d| num2[d] - crit * crit * kf * self.normalizer[d])
            .collect();
        let degenerate: Vec<f64> = (0..5)
            .map(|d| self.normalizer[d] - VARIANCE_FLOOR * self.scale[d])
            .collect();
        vec![self.numerator.to_vec(), boundary, degenerate]
    }
}
