//! Point estimators of the structural coefficient.
//!
//! All estimators here are ratios `a'Bb / a'Bx` for some weight matrix `B`:
//! the full projection (TSLS), the projection with its diagonal removed
//! (JIVE and its many-controls variants) or a zero-diagonal matrix that
//! also annihilates the controls (`beta3`).

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{IvError, Result};
use crate::inference::ZeroDiagA;
use crate::linalg::{off_diagonal_form, ProjectionBundle};

/// Relative floor on `|denominator| / ‖X‖²`.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Tsls,
    Jive1,
    Jive2,
    /// Partial out controls, then remove the diagonal of `P⊥` (IJIVE).
    Beta1Ijive,
    /// Raw data with the diagonal of `P⊥` removed.
    Beta2Naive,
    /// Zero-diagonal weights that annihilate the controls.
    Beta3,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 6] = [
        EstimatorId::Tsls,
        EstimatorId::Jive1,
        EstimatorId::Jive2,
        EstimatorId::Beta1Ijive,
        EstimatorId::Beta2Naive,
        EstimatorId::Beta3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Tsls => "tsls",
            EstimatorId::Jive1 => "jive1",
            EstimatorId::Jive2 => "jive2",
            EstimatorId::Beta1Ijive => "beta1",
            EstimatorId::Beta2Naive => "beta2",
            EstimatorId::Beta3 => "beta3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutcome {
    pub beta_hat: f64,
    pub std_error: Option<f64>,
    pub estimator: EstimatorId,
    pub denominator: f64,
    pub diagnostics: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl EstimateOutcome {
    fn new(estimator: EstimatorId, numerator: f64, denominator: f64) -> Self {
        Self {
            beta_hat: numerator / denominator,
            std_error: None,
            estimator,
            denominator,
            diagnostics: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
    }

    /// `beta_hat ± z · se`, when a standard error is attached.
    pub fn wald_interval(&self, z: f64) -> Option<(f64, f64)> {
        self.std_error
            .map(|se| (self.beta_hat - z * se, self.beta_hat + z * se))
    }
}

fn check_denominator(denominator: f64, x: ArrayView1<f64>) -> Result<()> {
    let floor = DENOMINATOR_FLOOR * x.dot(&x);
    if !(denominator.abs() >= floor) || denominator == 0.0 {
        return Err(IvError::DegenerateDenominator {
            value: denominator,
            floor,
        });
    }
    Ok(())
}

fn check_bundle(data: &Dataset, bundle: &ProjectionBundle) -> Result<()> {
    if data.n() != bundle.n() {
        return Err(IvError::Dimension(format!(
            "dataset has {} rows, bundle {}",
            data.n(),
            bundle.n()
        )));
    }
    if data.has_controls() != bundle.has_controls() {
        return Err(IvError::Dimension(
            "dataset and bundle disagree on the presence of controls".into(),
        ));
    }
    Ok(())
}

/// Two-stage least squares. No standard error is attached.
pub fn tsls(data: &Dataset, bundle: &ProjectionBundle) -> Result<EstimateOutcome> {
    check_bundle(data, bundle)?;
    // M_W P⊥ M_W = P⊥, so raw data with P⊥ equals the residualized ratio.
    let p = bundle.p();
    let px = p.dot(&data.x());
    let num = px.dot(&data.y());
    let den = px.dot(&data.x());
    check_denominator(den, data.x())?;
    let mut out = EstimateOutcome::new(EstimatorId::Tsls, num, den);
    out.diagnostics
        .push(("k_over_n".into(), bundle.k_z() as f64 / bundle.n() as f64));
    Ok(out)
}

fn saturated(bundle: &ProjectionBundle) -> bool {
    // Σ_{i≠j} P_ij² = tr(P) − Σ_i P_ii²
    let off = bundle.k_z() as f64 - bundle.p_diag().iter().map(|v| v * v).sum::<f64>();
    off <= 1e-10 * bundle.k_z() as f64
}

fn require_no_controls(data: &Dataset, what: &str) -> Result<()> {
    if data.has_controls() {
        return Err(IvError::Unsupported(format!(
            "{what} needs a dataset without controls; partial them out first or use beta3"
        )));
    }
    Ok(())
}

/// JIVE with the diagonal of `P` removed (JIV2).
pub fn jive2(data: &Dataset, bundle: &ProjectionBundle) -> Result<EstimateOutcome> {
    check_bundle(data, bundle)?;
    require_no_controls(data, "jive2")?;
    if saturated(bundle) {
        return Err(IvError::SaturatedFirstStage);
    }
    let p = bundle.p();
    let num = off_diagonal_form(p, data.x(), data.y());
    let den = off_diagonal_form(p, data.x(), data.x());
    check_denominator(den, data.x())?;
    let mut out = EstimateOutcome::new(EstimatorId::Jive2, num, den);
    attach_se(&mut out, p, data.x(), data.y(), true);
    flag_partialled(&mut out, data);
    Ok(out)
}

/// JIVE built from leave-one-out first-stage fits (JIV1).
///
/// The constructed instrument is `Z*_i = Σ_{j≠i} P_ij X_j / (1 − P_ii)`.
pub fn jive1(data: &Dataset, bundle: &ProjectionBundle) -> Result<EstimateOutcome> {
    check_bundle(data, bundle)?;
    require_no_controls(data, "jive1")?;
    if saturated(bundle) {
        return Err(IvError::SaturatedFirstStage);
    }
    let p_diag = bundle.p_diag();
    if let Some(index) = p_diag.iter().position(|&v| v >= 1.0 - 1e-12) {
        return Err(IvError::UnitLeverage { index });
    }
    let x = data.x();
    let px = bundle.p().dot(&x);
    let z_star: Array1<f64> = ndarray::Zip::from(&px)
        .and(&x)
        .and(p_diag)
        .map_collect(|&pxi, &xi, &pii| (pxi - pii * xi) / (1.0 - pii));
    let num = z_star.dot(&data.y());
    let den = z_star.dot(&x);
    check_denominator(den, x)?;
    let mut out = EstimateOutcome::new(EstimatorId::Jive1, num, den);
    flag_partialled(&mut out, data);
    Ok(out)
}

fn flag_partialled(out: &mut EstimateOutcome, data: &Dataset) {
    if data.partialled_out() > 0 {
        out.notes.push(format!(
            "controls ({}) were partialled out before removing the diagonal; \
             this estimator is biased when there are many controls",
            data.partialled_out()
        ));
        out.diagnostics
            .push(("partialled_out".into(), data.partialled_out() as f64));
    }
}

fn attach_se(
    out: &mut EstimateOutcome,
    weights: &Array2<f64>,
    x: ArrayView1<f64>,
    residual_source: ArrayView1<f64>,
    skip_diagonal: bool,
) {
    let resid = &residual_source - &(&x * out.beta_hat);
    if negligible(resid.view(), residual_source) {
        out.notes.push("standard error is zero".into());
        return;
    }
    match jackknife_variance(weights, x, resid.view(), out.denominator, skip_diagonal) {
        Ok(v) if v > 0.0 => out.std_error = Some(v.sqrt()),
        Ok(_) => out.notes.push("standard error is zero".into()),
        Err(e) => out.notes.push(format!("standard error unavailable: {e}")),
    }
}

/// Residuals at rounding level relative to the outcome.
fn negligible(resid: ArrayView1<f64>, source: ArrayView1<f64>) -> bool {
    resid.dot(&resid) <= 1e-24 * source.dot(&source)
}

/// Heteroskedasticity-robust variance of a jack-knife ratio estimator:
///
/// `V = D⁻² [ Σ_i (Σ_{j≠i} B_ij X_j)² ê_i² + Σ_i Σ_{j≠i} B_ij² X_i ê_i X_j ê_j ]`.
pub fn jackknife_variance(
    weights: &Array2<f64>,
    x: ArrayView1<f64>,
    resid: ArrayView1<f64>,
    denominator: f64,
    skip_diagonal: bool,
) -> Result<f64> {
    let n = x.len();
    let g: Array1<f64> = &x * &resid;
    let mut first = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        let row = weights.row(i);
        let mut bx = row.dot(&x);
        let mut b2g = 0.0;
        for j in 0..n {
            b2g += row[j] * row[j] * g[j];
        }
        if skip_diagonal {
            bx -= row[i] * x[i];
            b2g -= row[i] * row[i] * g[i];
        }
        first += bx * bx * resid[i] * resid[i];
        second += g[i] * b2g;
    }
    let v = (first + second) / (denominator * denominator);
    if v < 0.0 || !v.is_finite() {
        return Err(IvError::NonPositiveVariance { value: v });
    }
    Ok(v)
}

/// Standard error of the JIVE at `beta_hat`.
pub fn jive_se(data: &Dataset, bundle: &ProjectionBundle, beta_hat: f64) -> Result<f64> {
    check_bundle(data, bundle)?;
    let p = bundle.p();
    let den = off_diagonal_form(p, data.x(), data.x());
    check_denominator(den, data.x())?;
    let resid = data.implied_errors(beta_hat);
    jackknife_variance(p, data.x(), resid.view(), den, true).map(f64::sqrt)
}

/// IJIVE: residualize on `W`, then remove the diagonal of `P⊥`.
pub fn beta1_ijive(data: &Dataset, bundle: &ProjectionBundle) -> Result<EstimateOutcome> {
    check_bundle(data, bundle)?;
    let x = bundle.residualize_controls(data.x());
    let y = bundle.residualize_controls(data.y());
    let p = bundle.p();
    let num = off_diagonal_form(p, x.view(), y.view());
    let den = off_diagonal_form(p, x.view(), x.view());
    check_denominator(den, x.view())?;
    let mut out = EstimateOutcome::new(EstimatorId::Beta1Ijive, num, den);
    out.notes
        .push("biased when the number of controls is large; shown for comparison".into());
    Ok(out)
}

/// Raw data with the diagonal of `P⊥` removed.
pub fn beta2_naive(data: &Dataset, bundle: &ProjectionBundle) -> Result<EstimateOutcome> {
    check_bundle(data, bundle)?;
    let p = bundle.p();
    let num = off_diagonal_form(p, data.x(), data.y());
    let den = off_diagonal_form(p, data.x(), data.x());
    check_denominator(den, data.x())?;
    let mut out = EstimateOutcome::new(EstimatorId::Beta2Naive, num, den);
    out.notes.push(
        "removing the diagonal breaks the partialling-out property; shown for comparison".into(),
    );
    Ok(out)
}

/// `X'AY / X'AX` for a zero-diagonal `A` with `AW = 0`.
///
/// The standard error uses `A` in place of the off-diagonal projection and
/// residuals `M_W (Y − β̂ X)`.
pub fn beta3_zero_diag(
    data: &Dataset,
    bundle: &ProjectionBundle,
    a: &ZeroDiagA,
) -> Result<EstimateOutcome> {
    check_bundle(data, bundle)?;
    a.check_against(data.w())?;
    beta3_unchecked(data.x(), data.y(), bundle, a.matrix(), true)
}

pub(crate) fn beta3_unchecked(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    bundle: &ProjectionBundle,
    a: &Array2<f64>,
    with_se: bool,
) -> Result<EstimateOutcome> {
    let ax = a.dot(&x);
    let num = ax.dot(&y);
    let den = ax.dot(&x);
    check_denominator(den, x)?;
    let mut out = EstimateOutcome::new(EstimatorId::Beta3, num, den);
    if !with_se {
        return Ok(out);
    }
    let resid = bundle.residualize_controls((&y - &(&x * out.beta_hat)).view());
    if negligible(resid.view(), y) {
        out.notes.push("standard error is zero".into());
        return Ok(out);
    }
    match jackknife_variance(a, x, resid.view(), den, true) {
        Ok(v) if v > 0.0 => out.std_error = Some(v.sqrt()),
        Ok(_) => out.notes.push("standard error is zero".into()),
        Err(e) => out.notes.push(format!("standard error unavailable: {e}")),
    }
    Ok(out)
}

/// Runs one estimator by id. `beta3` needs the zero-diagonal matrix.
pub fn estimate(
    id: EstimatorId,
    data: &Dataset,
    bundle: &ProjectionBundle,
    a: Option<&ZeroDiagA>,
) -> Result<EstimateOutcome> {
    match id {
        EstimatorId::Tsls => tsls(data, bundle),
        EstimatorId::Jive1 => jive1(data, bundle),
        EstimatorId::Jive2 => jive2(data, bundle),
        EstimatorId::Beta1Ijive => beta1_ijive(data, bundle),
        EstimatorId::Beta2Naive => beta2_naive(data, bundle),
        EstimatorId::Beta3 => {
            let a = a.ok_or_else(|| IvError::Unsupported("beta3 needs the A matrix".into()))?;
            beta3_zero_diag(data, bundle, a)
        }
    }
}

/// Identification-strength quantities for a known first-stage signal `Zπ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    /// `Σ_{i≠j} P_ij s_i s_j`.
    pub mu2: f64,
    /// `s'P s` (equal to `π'Z'Zπ` when `s` lies in the instrument span).
    pub explained: f64,
    pub mu2_over_sqrt_k: f64,
}

pub fn concentration(bundle: &ProjectionBundle, signal: ArrayView1<f64>) -> Concentration {
    let p = bundle.p();
    let explained = signal.dot(&p.dot(&signal));
    let mu2 = off_diagonal_form(p, signal, signal);
    Concentration {
        mu2,
        explained,
        mu2_over_sqrt_k: mu2 / (bundle.k_z() as f64).sqrt(),
    }
}
