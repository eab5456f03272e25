use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::zero_diag::{check_balance, ZeroDiagA};
use super::{check_alpha, TestFlag, TestId, TestOutcome};
use crate::data::Dataset;
use crate::error::{IvError, Result};
use crate::linalg::{off_diagonal_form, ProjectionBundle};
use crate::variance::{self, VarianceEstimate, VarianceId};

/// Reporting mode of the LM statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmMode {
    /// The signed statistic against two-sided normal critical values.
    Signed,
    /// The squared statistic against `χ²₁`; same p-value and decision.
    Squared,
}

pub(crate) fn check_sizes(data: &Dataset, bundle: &ProjectionBundle) -> Result<()> {
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

fn require_no_controls(data: &Dataset, what: &str) -> Result<()> {
    if data.has_controls() {
        return Err(IvError::Unsupported(format!(
            "{what} is defined without controls; use arw"
        )));
    }
    Ok(())
}

/// Builds the outcome from a numerator and its normalizer.
pub(crate) fn assemble(
    test: TestId,
    numerator: f64,
    normalizer: VarianceEstimate,
    k: usize,
    beta0: f64,
    alpha: f64,
    e0: ArrayView1<f64>,
) -> TestOutcome {
    let sidedness = test.sidedness();
    let mut flags = Vec::new();
    let statistic = if e0.iter().all(|&v| v == 0.0) {
        flags.push(TestFlag::PerfectFitAtBeta0);
        flags.push(TestFlag::DegenerateNormalizer);
        0.0
    } else if normalizer.is_degenerate() {
        flags.push(TestFlag::DegenerateNormalizer);
        0.0
    } else {
        numerator / (k as f64 * normalizer.value).sqrt()
    };
    let p_value = sidedness.p_value(statistic);
    let degenerate = flags.contains(&TestFlag::DegenerateNormalizer);
    TestOutcome {
        test,
        statistic,
        p_value,
        rejected: !degenerate && p_value < alpha,
        alpha,
        sidedness,
        normalizer: normalizer.at(beta0),
        beta0,
        flags,
    }
}

/// Leave-one-out AR: `Σ_{i≠j} e_i P_ij e_j / √(K Φ̂)`, one-sided upper.
pub fn ar_loo(
    data: &Dataset,
    bundle: &ProjectionBundle,
    beta0: f64,
    variance: VarianceId,
    alpha: f64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    check_sizes(data, bundle)?;
    require_no_controls(data, "the leave-one-out AR test")?;
    let e0 = data.implied_errors(beta0);
    ar_from_errors(e0.view(), bundle, beta0, variance, alpha)
}

/// The leave-one-out AR test given implied errors `e0 = Y − β₀X`.
pub fn ar_from_errors(
    e0: ArrayView1<f64>,
    bundle: &ProjectionBundle,
    beta0: f64,
    variance: VarianceId,
    alpha: f64,
) -> Result<TestOutcome> {
    let normalizer = match variance {
        VarianceId::Phi1 => variance::phi1(e0, bundle)?,
        VarianceId::Phi2 => variance::phi2(e0, bundle)?,
        VarianceId::Phi3 => variance::phi3(e0, bundle)?,
        other => {
            return Err(IvError::Unsupported(format!(
                "{other} is not a normalizer for the AR test"
            )))
        }
    };
    let numerator = off_diagonal_form(bundle.p(), e0, e0);
    Ok(assemble(
        TestId::Ar,
        numerator,
        normalizer,
        bundle.k_z(),
        beta0,
        alpha,
        e0,
    ))
}

/// Leave-one-out LM: `Σ_{i≠j} e_i P_ij X_j / √(K Ψ̂)`, two-sided.
pub fn lm_loo(
    data: &Dataset,
    bundle: &ProjectionBundle,
    beta0: f64,
    variance: VarianceId,
    alpha: f64,
) -> Result<TestOutcome> {
    lm_loo_with_mode(data, bundle, beta0, variance, alpha, LmMode::Signed)
}

pub fn lm_loo_with_mode(
    data: &Dataset,
    bundle: &ProjectionBundle,
    beta0: f64,
    variance: VarianceId,
    alpha: f64,
    mode: LmMode,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    check_sizes(data, bundle)?;
    require_no_controls(data, "the leave-one-out LM test")?;
    let e0 = data.implied_errors(beta0);
    let mut out = lm_from_errors(e0.view(), data.x(), bundle, beta0, variance, alpha)?;
    if mode == LmMode::Squared {
        out.statistic *= out.statistic;
    }
    Ok(out)
}

/// The leave-one-out LM test given implied errors and the regressor.
pub fn lm_from_errors(
    e0: ArrayView1<f64>,
    x: ArrayView1<f64>,
    bundle: &ProjectionBundle,
    beta0: f64,
    variance: VarianceId,
    alpha: f64,
) -> Result<TestOutcome> {
    let normalizer = match variance {
        VarianceId::Psi1 => variance::psi1(e0, x, bundle)?,
        VarianceId::Psi2 => variance::psi2(e0, x, bundle)?,
        other => {
            return Err(IvError::Unsupported(format!(
                "{other} is not a normalizer for the LM test"
            )))
        }
    };
    let fit = variance::leave_one_out_fit(bundle, x);
    let numerator = e0.dot(&fit);
    Ok(assemble(
        TestId::Lm,
        numerator,
        normalizer,
        bundle.k_z(),
        beta0,
        alpha,
        e0,
    ))
}

/// AR with many controls: `e'Ae / √(K_Z Φ̂_W)`, one-sided upper.
///
/// Violations of the balanced-design conditions are flagged, not fatal.
pub fn ar_w(
    data: &Dataset,
    bundle: &ProjectionBundle,
    a: &ZeroDiagA,
    beta0: f64,
    alpha: f64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    check_sizes(data, bundle)?;
    a.check_against(data.w())?;
    let e0 = data.implied_errors(beta0);
    ar_w_from_errors(e0.view(), bundle, a, beta0, alpha)
}

/// `AR_W` given implied errors; `A` is trusted to annihilate the controls.
pub fn ar_w_from_errors(
    e0: ArrayView1<f64>,
    bundle: &ProjectionBundle,
    a: &ZeroDiagA,
    beta0: f64,
    alpha: f64,
) -> Result<TestOutcome> {
    let normalizer = variance::phi_w(e0, bundle, a)?;
    let numerator = a.matrix().dot(&e0).dot(&e0);
    let mut out = assemble(
        TestId::ArW,
        numerator,
        normalizer,
        bundle.k_z(),
        beta0,
        alpha,
        e0,
    );
    let report = check_balance(bundle, a);
    for v in report.violations() {
        out.flags.push(TestFlag::AssumptionViolation(v));
    }
    Ok(out)
}

/// Comparator AR statistics for designs with controls, both removing the
/// diagonal of `P⊥` and normalized by the cross-fit estimator built from the
/// raw implied errors. With `residualized` the numerator uses `M_W e`
/// (partial out, then drop the diagonal); otherwise the raw `e`.
pub fn ar_naive(
    data: &Dataset,
    bundle: &ProjectionBundle,
    beta0: f64,
    residualized: bool,
    alpha: f64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    check_sizes(data, bundle)?;
    let e0 = data.implied_errors(beta0);
    ar_naive_from_errors(e0.view(), bundle, beta0, residualized, alpha)
}

pub fn ar_naive_from_errors(
    e0: ArrayView1<f64>,
    bundle: &ProjectionBundle,
    beta0: f64,
    residualized: bool,
    alpha: f64,
) -> Result<TestOutcome> {
    let normalizer = variance::phi2(e0, bundle)?;
    let (test, numerator) = if residualized {
        let r = bundle.residualize_controls(e0);
        (
            TestId::ArResidualized,
            off_diagonal_form(bundle.p(), r.view(), r.view()),
        )
    } else {
        (TestId::ArRaw, off_diagonal_form(bundle.p(), e0, e0))
    };
    Ok(assemble(
        test,
        numerator,
        normalizer,
        bundle.k_z(),
        beta0,
        alpha,
        e0,
    ))
}

/// Runs any test by id. `variance` defaults to the cross-fit choice.
pub fn run_test(
    test: TestId,
    variance: Option<VarianceId>,
    data: &Dataset,
    bundle: &ProjectionBundle,
    a: Option<&ZeroDiagA>,
    beta0: f64,
    alpha: f64,
) -> Result<TestOutcome> {
    match test {
        TestId::Ar => ar_loo(
            data,
            bundle,
            beta0,
            variance.unwrap_or(VarianceId::Phi2),
            alpha,
        ),
        TestId::Lm => lm_loo(
            data,
            bundle,
            beta0,
            variance.unwrap_or(VarianceId::Psi2),
            alpha,
        ),
        TestId::ArW => {
            if let Some(v) = variance.filter(|v| *v != VarianceId::PhiW) {
                return Err(IvError::Unsupported(format!(
                    "arw is normalized by phi_w, not {v}"
                )));
            }
            let a = a.ok_or_else(|| IvError::Unsupported("arw needs the A matrix".into()))?;
            ar_w(data, bundle, a, beta0, alpha)
        }
        TestId::ArResidualized => ar_naive(data, bundle, beta0, true, alpha),
        TestId::ArRaw => ar_naive(data, bundle, beta0, false, alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Sidedness;
    use ndarray::{array, Array2};

    fn pair(y: [f64; 2], x: [f64; 2]) -> (Dataset, ProjectionBundle) {
        let z = Array2::ones((2, 1));
        let d = Dataset::new(array![y[0], y[1]], array![x[0], x[1]], z.clone(), None);
        let b = ProjectionBundle::from_instruments(z.view(), None).unwrap();
        (d.unwrap(), b)
    }

    #[test]
    fn ar_by_hand() {
        // e0 = (1, −1): numerator −1, Φ̂₁ = 1
        let (d, b) = pair([1.0, -1.0], [0.0, 0.0]);
        let t = ar_loo(&d, &b, 0.0, VarianceId::Phi1, 0.05).unwrap();
        assert!((t.statistic + 1.0).abs() < 1e-14);
        assert!((t.p_value - 0.841_344_746).abs() < 1e-8);
        assert!(!t.rejected);
        assert_eq!(t.sidedness, Sidedness::OneSidedUpper);

        let (d, b) = pair([1.0, 1.0], [0.0, 0.0]);
        let t = ar_loo(&d, &b, 0.0, VarianceId::Phi1, 0.05).unwrap();
        assert!((t.statistic - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lm_by_hand() {
        let (d, b) = pair([1.0, -1.0], [1.0, 2.0]);
        let t = lm_loo(&d, &b, 0.0, VarianceId::Psi1, 0.05).unwrap();
        assert!((t.statistic - 1.0).abs() < 1e-14);
        let s = lm_loo_with_mode(&d, &b, 0.0, VarianceId::Psi1, 0.05, LmMode::Squared).unwrap();
        assert!((s.statistic - 1.0).abs() < 1e-14);
        assert_eq!(s.p_value, t.p_value);
    }

    #[test]
    fn perfect_fit_does_not_reject() {
        let (d, b) = pair([2.0, 4.0], [1.0, 2.0]);
        let t = lm_loo(&d, &b, 2.0, VarianceId::Psi1, 0.05).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert!(t.has_flag(&TestFlag::PerfectFitAtBeta0));
        assert!(!t.rejected);
    }

    #[test]
    fn wrong_normalizer_is_rejected() {
        let (d, b) = pair([1.0, -1.0], [1.0, 2.0]);
        assert!(ar_loo(&d, &b, 0.0, VarianceId::Psi1, 0.05).is_err());
        assert!(lm_loo(&d, &b, 0.0, VarianceId::Phi2, 0.05).is_err());
        assert!(ar_loo(&d, &b, 0.0, VarianceId::Phi1, 1.5).is_err());
    }
}
