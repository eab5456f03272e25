//! Estimators of the normalizing factors of the robust statistics.
//!
//! AR-type normalizers estimate `Φ = (2/K) Σ_{i≠j} B_ij² σ_i² σ_j²`; LM-type
//! normalizers estimate
//! `Ψ = (1/K) Σ_i σ_i² (Σ_{j≠i} P_ij X_j)² + (1/K) Σ_{i≠j} P_ij² γ_i γ_j`.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{IvError, Result};
use crate::inference::ZeroDiagA;
use crate::linalg::{full_form, leave_out, ProjectionBundle};

/// Relative floor below which a normalizer is declared degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default sample-size cap for the leave-three-out estimator.
pub const PHI3_DEFAULT_MAX_N: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceId {
    Phi1,
    Phi2,
    Phi3,
    Psi1,
    Psi2,
    PhiW,
}

impl VarianceId {
    pub fn name(self) -> &'static str {
        match self {
            VarianceId::Phi1 => "phi1",
            VarianceId::Phi2 => "phi2",
            VarianceId::Phi3 => "phi3",
            VarianceId::Psi1 => "psi1",
            VarianceId::Psi2 => "psi2",
            VarianceId::PhiW => "phi_w",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "phi1" => Some(VarianceId::Phi1),
            "phi2" => Some(VarianceId::Phi2),
            "phi3" => Some(VarianceId::Phi3),
            "psi1" => Some(VarianceId::Psi1),
            "psi2" => Some(VarianceId::Psi2),
            "phi_w" | "phiw" => Some(VarianceId::PhiW),
            _ => None,
        }
    }

    /// True for the normalizers of AR-type statistics.
    pub fn is_ar_family(self) -> bool {
        !matches!(self, VarianceId::Psi1 | VarianceId::Psi2)
    }
}

impl fmt::Display for VarianceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A normalizer value together with its raw (pre-floor) value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// `max(raw, floor)`.
    pub value: f64,
    pub raw: f64,
    pub estimator: VarianceId,
    pub beta0: f64,
    /// The two summands of a Ψ-type estimate.
    pub components: Option<[f64; 2]>,
    pub floor: f64,
}

impl VarianceEstimate {
    fn new(estimator: VarianceId, raw: f64, scale: f64) -> Self {
        let floor = if scale > 0.0 && scale.is_finite() {
            VARIANCE_FLOOR * scale
        } else {
            VARIANCE_FLOOR
        };
        VarianceEstimate {
            value: if raw > floor { raw } else { floor },
            raw,
            estimator,
            beta0: f64::NAN,
            components: None,
            floor,
        }
    }

    /// Records the hypothesized value the implied errors were formed at.
    pub fn at(mut self, beta0: f64) -> Self {
        self.beta0 = beta0;
        self
    }

    /// Raw value at or below the floor, or not finite.
    pub fn is_degenerate(&self) -> bool {
        !(self.raw > self.floor) || !self.raw.is_finite()
    }
}

fn mean_square(v: ArrayView1<f64>) -> f64 {
    v.dot(&v) / v.len().max(1) as f64
}

fn check_len(v: ArrayView1<f64>, bundle: &ProjectionBundle, what: &'static str) -> Result<()> {
    if v.len() != bundle.n() {
        return Err(IvError::Dimension(format!(
            "{what} has length {}, expected {}",
            v.len(),
            bundle.n()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(IvError::NonFinite { what: what.into() });
    }
    Ok(())
}

fn k_of(bundle: &ProjectionBundle) -> Result<f64> {
    match bundle.k_z() {
        0 => Err(IvError::RankZero),
        k => Ok(k as f64),
    }
}

/// `Σ_{j≠i} P_ij X_j` for every `i`.
pub fn leave_one_out_fit(bundle: &ProjectionBundle, x: ArrayView1<f64>) -> Array1<f64> {
    let px = bundle.p().dot(&x);
    &px - &(bundle.p_diag() * &x)
}

/// `Φ̂₁ = (2/K) Σ_{i≠j} P_ij² e_i² e_j²`.
pub fn phi1(e0: ArrayView1<f64>, bundle: &ProjectionBundle) -> Result<VarianceEstimate> {
    check_len(e0, bundle, "implied errors")?;
    let k = k_of(bundle)?;
    let s = e0.mapv(|v| v * v);
    let raw = 2.0 / k * full_form(bundle.squared_offdiag(), s.view(), s.view());
    let ms = mean_square(e0);
    Ok(VarianceEstimate::new(VarianceId::Phi1, raw, ms * ms))
}

/// `Φ̂₂ = (2/K) Σ_{i≠j} P̃_ij² (e_i M_i e)(e_j M_j e)` with cross-fit weights
/// `P̃_ij² = P_ij² / (M_ii M_jj + M_ij²)`.
pub fn phi2(e0: ArrayView1<f64>, bundle: &ProjectionBundle) -> Result<VarianceEstimate> {
    check_len(e0, bundle, "implied errors")?;
    let k = k_of(bundle)?;
    let w = bundle.cross_fit_weights()?;
    let sigma = cross_fit_sigma(bundle.m(), e0);
    let raw = 2.0 / k * full_form(w, sigma.view(), sigma.view());
    let ms = mean_square(e0);
    Ok(VarianceEstimate::new(VarianceId::Phi2, raw, ms * ms))
}

/// `e_i (M e)_i`.
fn cross_fit_sigma(m: &Array2<f64>, e0: ArrayView1<f64>) -> Array1<f64> {
    &e0 * &m.dot(&e0)
}

/// Leave-three-out estimator with the default sample-size cap.
pub fn phi3(e0: ArrayView1<f64>, bundle: &ProjectionBundle) -> Result<VarianceEstimate> {
    phi3_with_limit(e0, bundle, Some(PHI3_DEFAULT_MAX_N))
}

/// `Φ̂₃ = (2/K) Σ_{i≠j} P_ij² ŝ_ij` where
/// `ŝ_ij = e_i e_j Σ_{k≠j} M̃_{ik,−(ij)} e_k (e_j − Z_j'δ̂_{−(ijk)})`.
///
/// `M̃_{·,−(ij)}` is the annihilator of the sample without `i` and `j`
/// (with `M̃_ii = 1`) and `δ̂_{−(ijk)}` regresses `e` on the instruments
/// without rows `i, j, k`. Pass `None` to lift the sample-size cap.
pub fn phi3_with_limit(
    e0: ArrayView1<f64>,
    bundle: &ProjectionBundle,
    max_n: Option<usize>,
) -> Result<VarianceEstimate> {
    check_len(e0, bundle, "implied errors")?;
    let k = k_of(bundle)?;
    if bundle.has_controls() {
        return Err(IvError::Unsupported(
            "phi3 is defined without controls; use phi_w".into(),
        ));
    }
    let n = bundle.n();
    if let Some(limit) = max_n {
        if n > limit {
            return Err(IvError::Unsupported(format!(
                "phi3 needs O(N³) work; N = {n} exceeds the cap {limit}"
            )));
        }
    }
    let p = bundle.p();
    let me: Vec<f64> = bundle.m().dot(&e0).to_vec();
    let mut total = 0.0;
    for i in 0..n {
        if e0[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            let pij = p[[i, j]];
            if j == i || pij == 0.0 || e0[j] == 0.0 {
                continue;
            }
            let pair = leave_out(bundle, &[i, j])?;
            let mut inner = e0[i] * pair.residual(j, &me);
            for kk in 0..n {
                if kk == i || kk == j || e0[kk] == 0.0 {
                    continue;
                }
                let m_ik = -pair.projection(i, kk);
                if m_ik == 0.0 {
                    continue;
                }
                let triple = leave_out(bundle, &[i, j, kk])?;
                inner += m_ik * e0[kk] * triple.residual(j, &me);
            }
            total += pij * pij * e0[i] * e0[j] * inner;
        }
    }
    let raw = 2.0 / k * total;
    let ms = mean_square(e0);
    Ok(VarianceEstimate::new(VarianceId::Phi3, raw, ms * ms))
}

/// `Ψ̂₁` with `σ̂_i² = e_i²` and `γ̂_i = X_i e_i`.
pub fn psi1(
    e0: ArrayView1<f64>,
    x: ArrayView1<f64>,
    bundle: &ProjectionBundle,
) -> Result<VarianceEstimate> {
    check_len(e0, bundle, "implied errors")?;
    check_len(x, bundle, "endogenous regressor")?;
    let k = k_of(bundle)?;
    let fit = leave_one_out_fit(bundle, x);
    let first: f64 = e0
        .iter()
        .zip(fit.iter())
        .map(|(e, f)| e * e * f * f)
        .sum::<f64>()
        / k;
    let g = &e0 * &x;
    let second = full_form(bundle.squared_offdiag(), g.view(), g.view()) / k;
    Ok(psi_estimate(VarianceId::Psi1, first, second, e0, x))
}

/// `Ψ̂₂` with `σ̂_i² = e_i M_i e / M_ii` and cross-fit `γ` terms.
pub fn psi2(
    e0: ArrayView1<f64>,
    x: ArrayView1<f64>,
    bundle: &ProjectionBundle,
) -> Result<VarianceEstimate> {
    check_len(e0, bundle, "implied errors")?;
    check_len(x, bundle, "endogenous regressor")?;
    let k = k_of(bundle)?;
    let w = bundle.cross_fit_weights()?;
    let me = bundle.m().dot(&e0);
    let fit = leave_one_out_fit(bundle, x);
    let m_diag = bundle.m_diag();
    let mut first = 0.0;
    for i in 0..e0.len() {
        first += e0[i] * me[i] / m_diag[i] * fit[i] * fit[i];
    }
    first /= k;
    let g = &x * &me;
    let second = full_form(w, g.view(), g.view()) / k;
    Ok(psi_estimate(VarianceId::Psi2, first, second, e0, x))
}

fn psi_estimate(
    id: VarianceId,
    first: f64,
    second: f64,
    e0: ArrayView1<f64>,
    x: ArrayView1<f64>,
) -> VarianceEstimate {
    let mut est = VarianceEstimate::new(id, first + second, mean_square(e0) * mean_square(x));
    est.components = Some([first, second]);
    est
}

/// `Φ̂_W = (2/K_Z) Σ_{i,j} [A_ij² / (M_ii M_jj + M_ij²)] σ̂_i σ̂_j` with
/// `σ̂_i = e_i (M e)_i` and `M` the joint annihilator of instruments and
/// controls.
pub fn phi_w(
    e0: ArrayView1<f64>,
    bundle: &ProjectionBundle,
    a: &ZeroDiagA,
) -> Result<VarianceEstimate> {
    check_len(e0, bundle, "implied errors")?;
    let k = k_of(bundle)?;
    let w = a.cross_fit_weights(bundle)?;
    let sigma = cross_fit_sigma(bundle.m(), e0);
    let raw = 2.0 / k * full_form(w, sigma.view(), sigma.view());
    let ms = mean_square(e0);
    Ok(VarianceEstimate::new(VarianceId::PhiW, raw, ms * ms))
}

/// `Φ₀ = (2/K) Σ_{i≠j} P_ij² σ_i² σ_j²` from known variances.
pub fn true_phi(sigma2: ArrayView1<f64>, bundle: &ProjectionBundle) -> f64 {
    2.0 / bundle.k_z() as f64 * full_form(bundle.squared_offdiag(), sigma2, sigma2)
}

/// `(2/K_Z) Σ_{i,j} A_ij² σ_i² σ_j²` from known variances.
pub fn true_phi_w(sigma2: ArrayView1<f64>, a: &ZeroDiagA, k_z: usize) -> f64 {
    let a2 = a.matrix().mapv(|v| v * v);
    2.0 / k_z as f64 * full_form(&a2, sigma2, sigma2)
}

/// `Ψ` from known `σ_i²`, `γ_i` and the realized `Σ_{j≠i} P_ij X_j`.
pub fn true_psi(
    sigma2: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    loo_fit: ArrayView1<f64>,
    bundle: &ProjectionBundle,
) -> f64 {
    let k = bundle.k_z() as f64;
    let first: f64 = sigma2
        .iter()
        .zip(loo_fit.iter())
        .map(|(s, f)| s * f * f)
        .sum();
    let second = full_form(bundle.squared_offdiag(), gamma, gamma);
    (first + second) / k
}
