use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use super::standard_normal;
use super::statistics::check_sizes;
use crate::data::Dataset;
use crate::error::{IvError, Result};
use crate::linalg::{off_diagonal_form, ProjectionBundle};
use crate::variance;

/// Cutoff for the pre-test at the default strength benchmark.
pub const PRETEST_CUTOFF: f64 = 4.14;
/// Strength `μ²/(Υ√K)` above which the JIVE t-test has bounded distortion.
pub const STRENGTH_BENCHMARK: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identification {
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretestOutcome {
    pub ftilde: f64,
    /// Conventional first-stage F statistic.
    pub first_stage_f: f64,
    /// Cross-fit estimate of the first-stage uncertainty measure.
    pub upsilon: f64,
    pub cutoff: f64,
    pub benchmark: f64,
    pub decision: Identification,
    /// Controls were partialled out before the pre-test.
    pub approximate: bool,
}

/// Strong iff `ftilde > cutoff` (strict).
pub fn decide(ftilde: f64, cutoff: f64) -> Identification {
    if ftilde > cutoff {
        Identification::Strong
    } else {
        Identification::Weak
    }
}

pub fn pretest_ftilde(data: &Dataset, bundle: &ProjectionBundle) -> Result<PretestOutcome> {
    pretest_ftilde_with_cutoff(data, bundle, PRETEST_CUTOFF, STRENGTH_BENCHMARK)
}

/// `F̃ = Σ_{i≠j} P_ij X_i X_j / √(K Υ̂)` with
/// `Υ̂ = (2/K) Σ_{i≠j} P̃_ij² (X_i M_i X)(X_j M_j X)`.
///
/// With controls the endogenous regressor is residualized first and the
/// outcome is flagged approximate.
pub fn pretest_ftilde_with_cutoff(
    data: &Dataset,
    bundle: &ProjectionBundle,
    cutoff: f64,
    benchmark: f64,
) -> Result<PretestOutcome> {
    check_sizes(data, bundle)?;
    let approximate = data.has_controls();
    let x = bundle.residualize_controls(data.x());
    let upsilon = variance::phi2(x.view(), bundle)?;
    if upsilon.is_degenerate() {
        return Err(IvError::NonPositiveVariance { value: upsilon.raw });
    }
    let k = bundle.k_z() as f64;
    let numerator = off_diagonal_form(bundle.p(), x.view(), x.view());
    let ftilde = numerator / (k * upsilon.value).sqrt();

    let explained = bundle.p().dot(&x).dot(&x);
    let resid = bundle.m().dot(&x).dot(&x);
    let dof = bundle.n() as f64 - k - bundle.k_w() as f64;
    let first_stage_f = if resid > 0.0 {
        (explained / k) / (resid / dof)
    } else {
        f64::INFINITY
    };
    Ok(PretestOutcome {
        ftilde,
        first_stage_f,
        upsilon: upsilon.value,
        cutoff,
        benchmark,
        decision: decide(ftilde, cutoff),
        approximate,
    })
}

/// Asymptotic power of the AR and LM tests under local alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPrediction {
    pub ar: f64,
    pub lm: f64,
}

/// AR: `1 − Φ(z_{1−α} − Δ²μ²/√(KΦ))`.
/// LM: `P(|N(m, 1)| > z_{1−α/2})` with `m = Δμ²/√(KΨ)`.
pub fn theoretical_power(
    mu2: f64,
    k: usize,
    phi: f64,
    psi: f64,
    delta: f64,
    alpha: f64,
) -> Result<PowerPrediction> {
    super::check_alpha(alpha)?;
    if !(phi > 0.0 && psi > 0.0) {
        return Err(IvError::NonPositiveVariance {
            value: phi.min(psi),
        });
    }
    let n = standard_normal();
    let kf = k as f64;
    let ar_shift = delta * delta * mu2 / (kf * phi).sqrt();
    let ar = n.sf(n.inverse_cdf(1.0 - alpha) - ar_shift);
    let m = delta * mu2 / (kf * psi).sqrt();
    let c = n.inverse_cdf(1.0 - alpha / 2.0);
    let lm = n.sf(c - m) + n.cdf(-c - m);
    Ok(PowerPrediction { ar, lm })
}
