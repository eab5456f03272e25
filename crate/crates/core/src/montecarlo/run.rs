use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{DesignKind, SimDesign, StatSpec};
use super::generate::{ControlsDesign, GroupDesign};
use crate::data::Dataset;
use crate::error::{IvError, Result};
use crate::estimators::{self, beta3_unchecked, EstimatorId};
use crate::inference::{
    ar_from_errors, ar_naive_from_errors, ar_w_from_errors, lm_from_errors, theoretical_power,
    StatisticCurve, TestId, TestOutcome,
};
use crate::variance::VarianceId;

/// Rejection frequency of one statistic at one alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub statistic: String,
    /// `β − β₀`.
    pub delta: f64,
    pub beta0: f64,
    pub rejections: usize,
    /// Replications with a usable outcome (degenerate ones included, as
    /// non-rejections).
    pub valid: usize,
    pub degenerate: usize,
    pub errors: usize,
    pub rate: f64,
    /// `√(p(1 − p)/valid)`.
    pub mc_se: f64,
    /// Asymptotic power at the realized design, where available.
    pub predicted: Option<f64>,
}

/// Mean bias of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub estimator: EstimatorId,
    /// `mean(β̂ − β)/β`, or the plain mean bias when `β = 0`.
    pub bias: f64,
    pub relative: bool,
    pub mc_se: f64,
    pub median_bias: f64,
    pub valid: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub design: SimDesign,
    /// Realized diagonal-free concentration `μ²`.
    pub mu2: f64,
    /// `μ²/√K_Z`.
    pub realized_strength: f64,
    pub rejection: Vec<RejectionRow>,
    pub bias: Vec<BiasRow>,
    pub notes: Vec<String>,
    pub runtime_seconds: f64,
}

impl SimReport {
    pub fn row(&self, statistic: &str, delta: f64) -> Option<&RejectionRow> {
        self.rejection
            .iter()
            .find(|r| r.statistic == statistic && (r.delta - delta).abs() < 1e-12)
    }

    pub fn bias_of(&self, estimator: EstimatorId) -> Option<&BiasRow> {
        self.bias.iter().find(|b| b.estimator == estimator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Accept,
    Reject,
    Degenerate,
    Failed,
}

impl Verdict {
    fn of(outcome: Result<TestOutcome>) -> Self {
        match outcome {
            Err(_) => Verdict::Failed,
            Ok(o) if o.is_degenerate() => Verdict::Degenerate,
            Ok(o) if o.rejected => Verdict::Reject,
            Ok(_) => Verdict::Accept,
        }
    }
}

/// Per-replication results, laid out `[statistic][delta]` and `[estimator]`.
struct RepResult {
    verdicts: Vec<Verdict>,
    estimates: Vec<Option<f64>>,
}

enum Fixed {
    Groups(GroupDesign),
    Controls(ControlsDesign),
}

impl Fixed {
    fn new(design: &SimDesign) -> Result<Self> {
        Ok(match design.kind {
            DesignKind::Groups => Fixed::Groups(GroupDesign::new(design)?),
            DesignKind::Controls => Fixed::Controls(ControlsDesign::new(design)?),
        })
    }

    fn mu2(&self) -> f64 {
        match self {
            Fixed::Groups(g) => g.mu2(),
            Fixed::Controls(c) => c.mu2(),
        }
    }
}

fn check_plan(design: &SimDesign, stats: &[StatSpec], estimators: &[EstimatorId]) -> Result<()> {
    for s in stats {
        let ok = match (design.kind, s.test) {
            (DesignKind::Groups, TestId::Ar) => {
                matches!(
                    s.variance,
                    None | Some(VarianceId::Phi1 | VarianceId::Phi2 | VarianceId::Phi3)
                )
            }
            (DesignKind::Groups, TestId::Lm) => {
                matches!(s.variance, None | Some(VarianceId::Psi1 | VarianceId::Psi2))
            }
            (DesignKind::Controls, TestId::ArW | TestId::ArResidualized | TestId::ArRaw) => {
                s.variance.is_none()
            }
            _ => false,
        };
        if !ok {
            return Err(IvError::Design(format!(
                "statistic {} is not available for the {:?} design",
                s.label(),
                design.kind
            )));
        }
    }
    for &e in estimators {
        let ok = match design.kind {
            DesignKind::Groups => matches!(
                e,
                EstimatorId::Tsls | EstimatorId::Jive1 | EstimatorId::Jive2
            ),
            DesignKind::Controls => matches!(
                e,
                EstimatorId::Tsls
                    | EstimatorId::Beta1Ijive
                    | EstimatorId::Beta2Naive
                    | EstimatorId::Beta3
            ),
        };
        if !ok {
            return Err(IvError::Design(format!(
                "estimator {e} is not available for the {:?} design",
                design.kind
            )));
        }
    }
    Ok(())
}

fn group_replication(
    g: &GroupDesign,
    rep: usize,
    stats: &[StatSpec],
    deltas: &[f64],
    estimators: &[EstimatorId],
) -> RepResult {
    let d = g.design();
    let bundle = g.bundle();
    let mut verdicts = Vec::with_capacity(stats.len() * deltas.len());
    let data = g.dataset(rep);
    for s in stats {
        let data = match &data {
            Ok(data) => data,
            Err(_) => {
                verdicts.extend(deltas.iter().map(|_| Verdict::Failed));
                continue;
            }
        };
        let curve = match s.variance {
            // five evaluations build the curve; fewer deltas are cheaper directly
            Some(VarianceId::Phi3) if deltas.len() <= 5 => None,
            v => StatisticCurve::new(s.test, v, data, bundle, None).ok(),
        };
        let crit = s.test.sidedness().critical_value(d.alpha);
        for &delta in deltas {
            let beta0 = d.beta - delta;
            let verdict = match &curve {
                Some(c) => match c.statistic_at(beta0) {
                    None => Verdict::Degenerate,
                    Some(t) if !t.is_finite() => Verdict::Failed,
                    Some(t) => {
                        let rejected = match s.test.sidedness() {
                            crate::inference::Sidedness::OneSidedUpper => t > crit,
                            crate::inference::Sidedness::TwoSided => t.abs() > crit,
                        };
                        if rejected {
                            Verdict::Reject
                        } else {
                            Verdict::Accept
                        }
                    }
                },
                None => {
                    let e0 = data.implied_errors(beta0);
                    Verdict::of(direct_group_test(s, e0.view(), data.x(), g, beta0))
                }
            };
            verdicts.push(verdict);
        }
    }
    let estimates = estimators
        .iter()
        .map(|&e| {
            let data = data.as_ref().ok()?;
            estimators::estimate(e, data, bundle, None)
                .ok()
                .map(|o| o.beta_hat)
        })
        .collect();
    RepResult {
        verdicts,
        estimates,
    }
}

fn direct_group_test(
    s: &StatSpec,
    e0: ArrayView1<f64>,
    x: ArrayView1<f64>,
    g: &GroupDesign,
    beta0: f64,
) -> Result<TestOutcome> {
    let alpha = g.design().alpha;
    match s.test {
        TestId::Ar => ar_from_errors(
            e0,
            g.bundle(),
            beta0,
            s.variance.unwrap_or(VarianceId::Phi2),
            alpha,
        ),
        TestId::Lm => lm_from_errors(
            e0,
            x,
            g.bundle(),
            beta0,
            s.variance.unwrap_or(VarianceId::Psi2),
            alpha,
        ),
        other => Err(IvError::Unsupported(format!("{other} on a group design"))),
    }
}

fn controls_replication(
    c: &ControlsDesign,
    rep: usize,
    stats: &[StatSpec],
    deltas: &[f64],
    estimators: &[EstimatorId],
) -> RepResult {
    let d = c.design();
    let bundle = c.bundle();
    let (y, x) = c.draw(rep);
    let mut verdicts = Vec::with_capacity(stats.len() * deltas.len());
    for s in stats {
        for &delta in deltas {
            let beta0 = d.beta - delta;
            let e0: Array1<f64> = &y - &(&x * beta0);
            let outcome = match s.test {
                TestId::ArW => ar_w_from_errors(e0.view(), bundle, c.zero_diag(), beta0, d.alpha),
                TestId::ArResidualized => {
                    ar_naive_from_errors(e0.view(), bundle, beta0, true, d.alpha)
                }
                TestId::ArRaw => ar_naive_from_errors(e0.view(), bundle, beta0, false, d.alpha),
                other => Err(IvError::Unsupported(format!(
                    "{other} on a controls design"
                ))),
            };
            verdicts.push(Verdict::of(outcome));
        }
    }
    let data: Option<Dataset> = if estimators.iter().any(|&e| e != EstimatorId::Beta3) {
        c.dataset(rep).ok()
    } else {
        None
    };
    let estimates = estimators
        .iter()
        .map(|&e| match e {
            EstimatorId::Beta3 => {
                beta3_unchecked(x.view(), y.view(), bundle, c.zero_diag().matrix(), false)
                    .ok()
                    .map(|o| o.beta_hat)
            }
            _ => estimators::estimate(e, data.as_ref()?, bundle, None)
                .ok()
                .map(|o| o.beta_hat),
        })
        .collect();
    RepResult {
        verdicts,
        estimates,
    }
}

/// Runs the statistics at every `Δ` in `deltas` and the estimators over all
/// replications. Results do not depend on the thread count.
pub fn run_design(
    design: &SimDesign,
    stats: &[StatSpec],
    deltas: &[f64],
    estimators: &[EstimatorId],
) -> Result<SimReport> {
    let start = Instant::now();
    design.validate()?;
    check_plan(design, stats, estimators)?;
    let fixed = Fixed::new(design)?;
    let results: Vec<RepResult> = (0..design.reps)
        .into_par_iter()
        .map(|rep| match &fixed {
            Fixed::Groups(g) => group_replication(g, rep, stats, deltas, estimators),
            Fixed::Controls(c) => controls_replication(c, rep, stats, deltas, estimators),
        })
        .collect();

    let mu2 = fixed.mu2();
    let mut notes = Vec::new();
    if let Fixed::Controls(c) = &fixed {
        if c.redraws() > 0 {
            notes.push(format!(
                "fixed design redrawn {} time(s) to satisfy the balance conditions",
                c.redraws()
            ));
        }
    }

    let mut rejection = Vec::with_capacity(stats.len() * deltas.len());
    for (si, s) in stats.iter().enumerate() {
        for (di, &delta) in deltas.iter().enumerate() {
            let idx = si * deltas.len() + di;
            let mut counts = [0usize; 4];
            for r in &results {
                counts[r.verdicts[idx] as usize] += 1;
            }
            let [accept, reject, degenerate, errors] = counts;
            let valid = accept + reject + degenerate;
            let rate = if valid > 0 {
                reject as f64 / valid as f64
            } else {
                f64::NAN
            };
            let predicted = match &fixed {
                Fixed::Groups(g) => predicted_power(g, s, delta, mu2),
                Fixed::Controls(_) => None,
            };
            rejection.push(RejectionRow {
                statistic: s.label(),
                delta,
                beta0: design.beta - delta,
                rejections: reject,
                valid,
                degenerate,
                errors,
                rate,
                mc_se: (rate * (1.0 - rate) / valid.max(1) as f64).sqrt(),
                predicted,
            });
        }
    }

    let relative = design.beta != 0.0;
    let bias = estimators
        .iter()
        .enumerate()
        .map(|(ei, &estimator)| {
            let mut errs: Vec<f64> = results
                .iter()
                .filter_map(|r| r.estimates[ei])
                .map(|b| {
                    let e = b - design.beta;
                    if relative {
                        e / design.beta
                    } else {
                        e
                    }
                })
                .collect();
            let valid = errs.len();
            let (mean, sd) = mean_sd(&errs);
            errs.sort_by(f64::total_cmp);
            BiasRow {
                estimator,
                bias: mean,
                relative,
                mc_se: sd / (valid.max(1) as f64).sqrt(),
                median_bias: median_sorted(&errs),
                valid,
                errors: design.reps - valid,
            }
        })
        .collect();

    Ok(SimReport {
        design: design.clone(),
        mu2,
        realized_strength: mu2 / (design.k_z as f64).sqrt(),
        rejection,
        bias,
        notes,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Asymptotic power with the truths at the alternative; `Ψ` uses the
/// expected regressor `E[X] = Zπ`.
fn predicted_power(g: &GroupDesign, s: &StatSpec, delta: f64, mu2: f64) -> Option<f64> {
    let k = g.bundle().k_z();
    let alpha = g.design().alpha;
    let phi = g.true_phi(delta);
    let psi = g.true_psi(delta, g.signal());
    let p = theoretical_power(mu2, k, phi, psi, delta, alpha).ok()?;
    match s.test {
        TestId::Ar => Some(p.ar),
        TestId::Lm => Some(p.lm),
        _ => None,
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Size at `β₀ = β` for the design's statistics.
pub fn run_size(design: &SimDesign) -> Result<SimReport> {
    run_design(design, &design.statistics, &[0.0], &[])
}

/// Rejection rates over the design's `Δ` grid.
pub fn run_power_curve(design: &SimDesign) -> Result<SimReport> {
    run_design(design, &design.statistics, &design.delta_grid, &[])
}

/// Bias of the design's estimators.
pub fn run_bias(design: &SimDesign) -> Result<SimReport> {
    run_design(design, &[], &[], &design.estimators)
}

/// Everything the design asks for: rejection rates over the `Δ` grid and
/// estimator bias.
pub fn simulate(design: &SimDesign) -> Result<SimReport> {
    run_design(
        design,
        &design.statistics,
        &design.delta_grid,
        &design.estimators,
    )
}

/// Kolmogorov–Smirnov distance of a sample from the uniform law on `[0, 1]`
/// and its asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub distance: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn ks_uniform_distance(sample: &[f64]) -> KsResult {
    let mut v: Vec<f64> = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let nf = n as f64;
    let distance = v
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            ((i + 1) as f64 / nf - u).max(u - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    KsResult {
        distance,
        p_value: kolmogorov_sf(distance * nf.sqrt()),
        n,
    }
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
