//! Robust tests, the identification pre-test, the zero-diagonal
//! construction for many controls and confidence-set inversion.

mod confset;
mod curve;
mod pretest;
mod roots;
mod statistics;
mod zero_diag;

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{IvError, Result};
use crate::variance::VarianceEstimate;

pub use confset::{
    default_grid, hausdorff, invert_test, ConfidenceSet, Engine, GridSpec, Interval,
    DEFAULT_GRID_POINTS, DEFAULT_GRID_WIDTH,
};
pub use curve::StatisticCurve;
pub use pretest::{
    decide, pretest_ftilde, pretest_ftilde_with_cutoff, theoretical_power, Identification,
    PowerPrediction, PretestOutcome, PRETEST_CUTOFF, STRENGTH_BENCHMARK,
};
pub use roots::real_roots;
pub use statistics::{
    ar_from_errors, ar_loo, ar_naive, ar_naive_from_errors, ar_w, ar_w_from_errors, lm_from_errors,
    lm_loo, lm_loo_with_mode, run_test, LmMode,
};
pub use zero_diag::{
    check_balance, check_balance_with, compute_theta, BalanceReport, ThetaDiagnostics, ZeroDiagA,
    ASSUMPTION_DELTA, ASSUMPTION_WARN,
};

/// The test statistics available for a single hypothesis `β = β₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestId {
    /// Leave-one-out AR.
    Ar,
    /// Leave-one-out LM (two-sided).
    Lm,
    /// AR with many controls built on the zero-diagonal matrix.
    ArW,
    /// Residualize on the controls, then remove the diagonal of `P⊥`.
    ArResidualized,
    /// Raw data with the diagonal of `P⊥` removed.
    ArRaw,
}

impl TestId {
    pub fn name(self) -> &'static str {
        match self {
            TestId::Ar => "ar",
            TestId::Lm => "lm",
            TestId::ArW => "arw",
            TestId::ArResidualized => "ar1",
            TestId::ArRaw => "ar2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ar" => Some(TestId::Ar),
            "lm" => Some(TestId::Lm),
            "arw" | "ar_w" => Some(TestId::ArW),
            "ar1" => Some(TestId::ArResidualized),
            "ar2" => Some(TestId::ArRaw),
            _ => None,
        }
    }

    pub fn sidedness(self) -> Sidedness {
        match self {
            TestId::Lm => Sidedness::TwoSided,
            _ => Sidedness::OneSidedUpper,
        }
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    OneSidedUpper,
    TwoSided,
}

impl Sidedness {
    pub fn p_value(self, statistic: f64) -> f64 {
        let n = standard_normal();
        match self {
            Sidedness::OneSidedUpper => n.sf(statistic),
            Sidedness::TwoSided => (2.0 * n.sf(statistic.abs())).min(1.0),
        }
    }

    /// Critical value of the statistic (of `|statistic|` when two-sided).
    pub fn critical_value(self, alpha: f64) -> f64 {
        let n = standard_normal();
        match self {
            Sidedness::OneSidedUpper => n.inverse_cdf(1.0 - alpha),
            Sidedness::TwoSided => n.inverse_cdf(1.0 - alpha / 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum TestFlag {
    /// The normalizer fell at or below its floor; the test does not reject.
    DegenerateNormalizer,
    /// The implied errors vanish at `β₀`; the statistic is set to zero.
    PerfectFitAtBeta0,
    /// A design assumption of the test is violated.
    AssumptionViolation(String),
}

/// Result of one test of `β = β₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: TestId,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub normalizer: VarianceEstimate,
    pub beta0: f64,
    pub flags: Vec<TestFlag>,
}

impl TestOutcome {
    pub fn has_flag(&self, flag: &TestFlag) -> bool {
        self.flags.contains(flag)
    }

    pub fn is_degenerate(&self) -> bool {
        self.has_flag(&TestFlag::DegenerateNormalizer)
    }
}

pub(crate) fn standard_normal() -> Normal {
    Normal::standard()
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(IvError::Unsupported(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}
