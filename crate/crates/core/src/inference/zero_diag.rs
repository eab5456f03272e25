use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{IvError, Result};
use crate::linalg::qr::lu_solve;
use crate::linalg::{cross_fit_weights, ProjectionBundle};

/// Default bound on `max P⊥_ii / M_W,ii²`.
pub const ASSUMPTION_DELTA: f64 = 0.99;
/// Ratio above which a passing design is flagged.
pub const ASSUMPTION_WARN: f64 = 0.9;

const DIAGONAL_TOLERANCE: f64 = 1e-10;
const ANNIHILATION_TOLERANCE: f64 = 1e-8;
const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaDiagnostics {
    pub min_m_w_diag: f64,
    pub min_theta: f64,
    pub max_theta: f64,
    /// `max_i P⊥_ii / M_W,ii²`.
    pub max_leverage_ratio: f64,
    /// `Σ_{i,j} A_ij²`.
    pub sum_sq: f64,
    pub k_z: usize,
}

impl ThetaDiagnostics {
    /// `(1 − max θ) K_Z ≤ Σ A_ij² ≤ K_Z` up to `slack`.
    pub fn sum_sq_within_bounds(&self, slack: f64) -> bool {
        let k = self.k_z as f64;
        self.sum_sq >= (1.0 - self.max_theta) * k - slack && self.sum_sq <= k + slack
    }
}

/// `A = P⊥ − M_W D_θ M_W` with `θ` chosen so that `diag(A) = 0`.
#[derive(Debug, Clone)]
pub struct ZeroDiagA {
    a: Array2<f64>,
    theta: Array1<f64>,
    diagnostics: ThetaDiagnostics,
    weights: OnceLock<Array2<f64>>,
}

impl ZeroDiagA {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    pub fn diagnostics(&self) -> &ThetaDiagnostics {
        &self.diagnostics
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Verifies `A w = 0` for every column of `w`, relative to the column norm.
    pub fn check_against(&self, w: ArrayView2<f64>) -> Result<()> {
        if w.nrows() != self.n() {
            return Err(IvError::Dimension(format!(
                "controls have {} rows, A has {}",
                w.nrows(),
                self.n()
            )));
        }
        let mut worst = 0.0_f64;
        for col in w.columns() {
            let norm = col.dot(&col).sqrt();
            if norm == 0.0 {
                continue;
            }
            let aw = self.a.dot(&col);
            let dev = aw.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / norm;
            worst = worst.max(dev);
        }
        if worst > ANNIHILATION_TOLERANCE {
            return Err(IvError::StructuralCheck {
                property: "A annihilates the controls",
                deviation: worst,
            });
        }
        Ok(())
    }

    /// `A_ij² / (M_ii M_jj + M_ij²)` with `M` the joint annihilator.
    pub fn cross_fit_weights(&self, bundle: &ProjectionBundle) -> Result<&Array2<f64>> {
        if bundle.n() != self.n() {
            return Err(IvError::Dimension("A and bundle sizes differ".into()));
        }
        if let Some((index, value)) = bundle.perfectly_fit() {
            return Err(IvError::PerfectFit { index, value });
        }
        Ok(self
            .weights
            .get_or_init(|| cross_fit_weights(&self.a, bundle.m(), true)))
    }
}

/// Solves `(M_W ∘ M_W) θ = diag(P⊥)` and forms `A`.
pub fn compute_theta(bundle: &ProjectionBundle) -> Result<ZeroDiagA> {
    let n = bundle.n();
    let p = bundle.p();
    let p_diag = bundle.p_diag();
    let (a, theta) = match bundle.m_w() {
        None => {
            let mut a = p.clone();
            a.diag_mut().fill(0.0);
            (a, p_diag.clone())
        }
        Some(mw) => {
            let h = mw.mapv(|v| v * v);
            let theta = lu_solve(&h, p_diag)?;
            let mut scaled = mw.clone();
            for (mut row, &t) in scaled.rows_mut().into_iter().zip(theta.iter()) {
                row *= t;
            }
            let mdm = mw.dot(&scaled);
            let mut a = p - &mdm;
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = 0.5 * (a[[i, j]] + a[[j, i]]);
                    a[[i, j]] = s;
                    a[[j, i]] = s;
                }
            }
            (a, theta)
        }
    };
    let max_diag = a.diag().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(max_diag <= DIAGONAL_TOLERANCE) {
        return Err(IvError::StructuralCheck {
            property: "A has zero diagonal",
            deviation: max_diag,
        });
    }
    let mut a = a;
    a.diag_mut().fill(0.0);

    let sum_sq: f64 = a.iter().map(|v| v * v).sum();
    let k_z = bundle.k_z();
    let identity = k_z as f64 - p_diag.dot(&theta);
    let dev = (sum_sq - identity).abs();
    if !(dev <= IDENTITY_TOLERANCE * (k_z as f64).max(1.0)) {
        return Err(IvError::StructuralCheck {
            property: "sum of squared A equals K_Z minus the theta-weighted leverages",
            deviation: dev,
        });
    }
    if bundle.has_controls() {
        let dev = control_probe(bundle, &a);
        if dev > ANNIHILATION_TOLERANCE {
            return Err(IvError::StructuralCheck {
                property: "A annihilates the controls",
                deviation: dev,
            });
        }
    }

    let m_w_diag = bundle.m_w_diag();
    let ratio = p_diag
        .iter()
        .zip(m_w_diag.iter())
        .map(|(p, m)| p / (m * m))
        .fold(f64::NEG_INFINITY, f64::max);
    let diagnostics = ThetaDiagnostics {
        min_m_w_diag: m_w_diag.iter().copied().fold(f64::INFINITY, f64::min),
        min_theta: theta.iter().copied().fold(f64::INFINITY, f64::min),
        max_theta: theta.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_leverage_ratio: ratio,
        sum_sq,
        k_z,
    };
    Ok(ZeroDiagA {
        a,
        theta,
        diagnostics,
        weights: OnceLock::new(),
    })
}

/// Largest `‖A (I − M_W) r‖_∞ / ‖(I − M_W) r‖` over a few fixed probes.
fn control_probe(bundle: &ProjectionBundle, a: &Array2<f64>) -> f64 {
    let n = bundle.n();
    let mut worst = 0.0_f64;
    for probe in 0..3u64 {
        let r = Array1::from_iter((0..n as u64).map(|i| {
            let h = crate::montecarlo::mix64(probe, i);
            (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }));
        let in_span = &r - &bundle.residualize_controls(r.view());
        let norm = in_span.dot(&in_span).sqrt();
        if norm == 0.0 {
            continue;
        }
        let av = a.dot(&in_span);
        worst = worst.max(av.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / norm);
    }
    worst
}

/// Balanced-design report for the many-controls test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub min_m_w_diag: f64,
    pub min_theta: f64,
    pub max_leverage_ratio: f64,
    pub delta: f64,
    pub m_w_ok: bool,
    pub theta_ok: bool,
    pub leverage_ok: bool,
    /// Passing, but the leverage ratio exceeds the warning tier.
    pub warn: bool,
    pub pass: bool,
}

impl BalanceReport {
    /// Human-readable reasons for a failure.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.m_w_ok {
            out.push(format!(
                "min M_W,ii = {:.4} is not above 1/2",
                self.min_m_w_diag
            ));
        }
        if !self.theta_ok {
            out.push(format!("min theta = {:.4e} is negative", self.min_theta));
        }
        if !self.leverage_ok {
            out.push(format!(
                "max P_ii/M_W,ii^2 = {:.4} exceeds {}",
                self.max_leverage_ratio, self.delta
            ));
        }
        out
    }
}

pub fn check_balance(bundle: &ProjectionBundle, a: &ZeroDiagA) -> BalanceReport {
    check_balance_with(bundle, a.theta(), ASSUMPTION_DELTA)
}

pub fn check_balance_with(
    bundle: &ProjectionBundle,
    theta: &Array1<f64>,
    delta: f64,
) -> BalanceReport {
    let m_w_diag = bundle.m_w_diag();
    let min_m_w_diag = m_w_diag.iter().copied().fold(f64::INFINITY, f64::min);
    let min_theta = theta.iter().copied().fold(f64::INFINITY, f64::min);
    let max_leverage_ratio = bundle
        .p_diag()
        .iter()
        .zip(m_w_diag.iter())
        .map(|(p, m)| p / (m * m))
        .fold(f64::NEG_INFINITY, f64::max);
    let m_w_ok = min_m_w_diag > 0.5;
    let theta_ok = min_theta >= -1e-10;
    let leverage_ok = max_leverage_ratio <= delta;
    let pass = m_w_ok && theta_ok && leverage_ok;
    BalanceReport {
        min_m_w_diag,
        min_theta,
        max_leverage_ratio,
        delta,
        m_w_ok,
        theta_ok,
        leverage_ok,
        warn: pass && max_leverage_ratio > ASSUMPTION_WARN,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn four_point() -> ProjectionBundle {
        let z = array![[1.0], [0.0], [0.0], [0.0]];
        let w = Array2::ones((4, 1));
        ProjectionBundle::from_instruments(z.view(), Some(w.view())).unwrap()
    }

    #[test]
    fn four_point_theta_by_hand() {
        let b = four_point();
        let a = compute_theta(&b).unwrap();
        let expect = [4.0 / 3.0, 0.0, 0.0, 0.0];
        for (t, e) in a.theta().iter().zip(expect) {
            assert!((t - e).abs() < 1e-12, "{t} vs {e}");
        }
        assert!(a.matrix()[[0, 0]].abs() < 1e-15);
        a.check_against(Array2::ones((4, 1)).view()).unwrap();
        let report = check_balance(&b, &a);
        assert!(!report.pass);
        assert!(!report.leverage_ok);
        assert!((report.max_leverage_ratio - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_controls_reduces_to_offdiagonal_projection() {
        let b = ProjectionBundle::from_groups(&[0, 0, 0, 1, 1, 1, 2, 2, 2, 2]).unwrap();
        let a = compute_theta(&b).unwrap();
        assert_eq!(a.theta(), b.p_diag());
        for i in 0..10 {
            for j in 0..10 {
                let expect = if i == j { 0.0 } else { b.p()[[i, j]] };
                assert_eq!(a.matrix()[[i, j]], expect);
            }
        }
        let report = check_balance(&b, &a);
        assert!(report.pass);
    }

    #[test]
    fn small_cells_make_theta_unidentified() {
        // two-observation cells make M_W∘M_W singular
        let n = 9;
        let cells = [0, 0, 1, 1, 1, 1, 1, 1, 1];
        let mut w = Array2::zeros((n, 2));
        for (i, &c) in cells.iter().enumerate() {
            w[[i, c]] = 1.0;
        }
        let z =
            Array1::from_iter((0..n).map(|i| (i as f64 * 0.7).sin())).insert_axis(ndarray::Axis(1));
        let b = ProjectionBundle::from_instruments(z.view(), Some(w.view())).unwrap();
        assert!(matches!(compute_theta(&b), Err(IvError::Singular)));
    }

    #[test]
    fn high_leverage_control_fails_the_balance_check() {
        let n = 9;
        let mut w = Array2::ones((n, 2));
        for i in 0..n {
            w[[i, 1]] = if i == n - 1 { 30.0 } else { i as f64 };
        }
        let z =
            Array1::from_iter((0..n).map(|i| (i as f64 * 0.7).sin())).insert_axis(ndarray::Axis(1));
        let b = ProjectionBundle::from_instruments(z.view(), Some(w.view())).unwrap();
        assert!(b.m_w_diag()[n - 1] < 0.5);
        let report = check_balance_with(&b, b.p_diag(), ASSUMPTION_DELTA);
        assert!(!report.m_w_ok);
        assert!(!report.pass);
        assert!(!report.violations().is_empty());
    }
}
