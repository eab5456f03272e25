//! Confidence sets by test inversion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::StatisticCurve;
use super::roots::real_roots;
use super::statistics::run_test;
use super::zero_diag::ZeroDiagA;
use super::{check_alpha, TestId};
use crate::data::Dataset;
use crate::error::{IvError, Result};
use crate::estimators::{self, EstimateOutcome};
use crate::linalg::ProjectionBundle;
use crate::variance::VarianceId;

pub const DEFAULT_GRID_POINTS: usize = 2001;
/// Half-width of the default grid in standard errors.
pub const DEFAULT_GRID_WIDTH: f64 = 20.0;
const OUTER_POINTS: usize = 600;
const BISECTION_TOLERANCE: f64 = 1e-6;
/// Reach of the outer grid, in multiples of the grid half-width.
const TAIL_REACH: f64 = 1e9;

/// Serializes infinite endpoints as the strings `"inf"` / `"-inf"`.
mod endpoint {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            v.serialize(s)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("bad endpoint {t}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "endpoint")]
    pub lo: f64,
    #[serde(with = "endpoint")]
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, b: f64) -> bool {
        self.lo <= b && b <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Grid,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Geometrically spaced points per side between the grid and the far
    /// tail; `0` restricts the search to `[lo, hi]`.
    pub outer_points: usize,
}

pub fn default_grid(center: f64, se: f64) -> GridSpec {
    GridSpec {
        lo: center - DEFAULT_GRID_WIDTH * se,
        hi: center + DEFAULT_GRID_WIDTH * se,
        points: DEFAULT_GRID_POINTS,
        outer_points: OUTER_POINTS,
    }
}

/// The set of `β₀` not rejected by a test, as a union of closed intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub test: TestId,
    pub variance: Option<VarianceId>,
    pub alpha: f64,
    pub engine: Engine,
    pub intervals: Vec<Interval>,
    pub unbounded_below: bool,
    pub unbounded_above: bool,
    pub whole_line: bool,
    pub empty: bool,
    /// Scale of the bisection tolerance.
    pub scale: f64,
    pub notes: Vec<String>,
}

impl ConfidenceSet {
    fn from_intervals(
        test: TestId,
        variance: Option<VarianceId>,
        alpha: f64,
        engine: Engine,
        intervals: Vec<Interval>,
        scale: f64,
    ) -> Self {
        let unbounded_below = intervals.first().is_some_and(|i| i.lo == f64::NEG_INFINITY);
        let unbounded_above = intervals.last().is_some_and(|i| i.hi == f64::INFINITY);
        let whole_line = intervals.len() == 1 && unbounded_below && unbounded_above;
        let mut notes = Vec::new();
        if whole_line {
            notes.push("the confidence set is the whole real line".into());
        } else if unbounded_below || unbounded_above {
            notes.push("the confidence set is unbounded".into());
        }
        ConfidenceSet {
            test,
            variance,
            alpha,
            engine,
            empty: intervals.is_empty(),
            intervals,
            unbounded_below,
            unbounded_above,
            whole_line,
            scale,
            notes,
        }
    }

    pub fn contains(&self, b: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(b))
    }

    pub fn is_bounded(&self) -> bool {
        !(self.unbounded_below || self.unbounded_above)
    }

    /// Hausdorff distance to another union of intervals (both bounded).
    pub fn hausdorff(&self, other: &[Interval]) -> f64 {
        hausdorff(&self.intervals, other)
    }
}

fn distance_to(set: &[Interval], b: f64) -> f64 {
    set.iter()
        .map(|i| {
            if i.contains(b) {
                0.0
            } else if b < i.lo {
                i.lo - b
            } else {
                b - i.hi
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn directed(a: &[Interval], b: &[Interval]) -> f64 {
    let mut worst = 0.0_f64;
    for ia in a {
        let mut candidates = vec![ia.lo, ia.hi];
        // inside a gap of `b`, the distance peaks at the gap midpoint
        for w in b.windows(2) {
            let mid = 0.5 * (w[0].hi + w[1].lo);
            if ia.contains(mid) {
                candidates.push(mid);
            }
        }
        for c in candidates {
            worst = worst.max(distance_to(b, c));
        }
    }
    worst
}

/// Hausdorff distance between two unions of sorted, disjoint intervals.
pub fn hausdorff(a: &[Interval], b: &[Interval]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => directed(a, b).max(directed(b, a)),
    }
}

/// Center and scale for the default grid: the JIVE (or, with controls, the
/// zero-diagonal estimator) and its standard error.
fn grid_anchor(data: &Dataset, bundle: &ProjectionBundle, a: Option<&ZeroDiagA>) -> (f64, f64) {
    let est: Option<EstimateOutcome> = if data.has_controls() {
        a.and_then(|a| estimators::beta3_zero_diag(data, bundle, a).ok())
    } else {
        estimators::jive2(data, bundle).ok()
    };
    match est {
        Some(e) if e.beta_hat.is_finite() => {
            let se = e
                .std_error
                .filter(|s| *s > 0.0 && s.is_finite())
                .unwrap_or(1.0_f64.max(e.beta_hat.abs()));
            (e.beta_hat, se)
        }
        _ => (0.0, 1.0),
    }
}

/// Inverts a test at level `alpha`.
///
/// The grid engine evaluates through precomputed polynomial coefficients
/// when the normalizer admits them and otherwise re-runs the test at every
/// point. The polynomial engine locates all status changes as real roots.
#[allow(clippy::too_many_arguments)]
pub fn invert_test(
    data: &Dataset,
    bundle: &ProjectionBundle,
    a: Option<&ZeroDiagA>,
    test: TestId,
    variance: Option<VarianceId>,
    alpha: f64,
    engine: Engine,
    grid: Option<GridSpec>,
) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    let crit = test.sidedness().critical_value(alpha);
    let curve = StatisticCurve::new(test, variance, data, bundle, a);
    let spec = match grid {
        Some(g) => g,
        None => {
            let (center, se) = grid_anchor(data, bundle, a);
            default_grid(center, se)
        }
    };
    if !(spec.lo < spec.hi) || spec.points < 2 {
        return Err(IvError::Unsupported(format!(
            "grid needs lo < hi and at least 2 points, got {spec:?}"
        )));
    }
    let scale = (spec.hi - spec.lo) / (2.0 * DEFAULT_GRID_WIDTH);
    match engine {
        Engine::Polynomial => {
            let curve = curve?;
            let intervals = polynomial_intervals(&curve, crit);
            Ok(ConfidenceSet::from_intervals(
                test,
                Some(curve.variance),
                alpha,
                engine,
                intervals,
                scale,
            ))
        }
        Engine::Grid => {
            let intervals = match curve {
                Ok(c) => grid_intervals(|b| Ok(c.accepts(b, crit)), spec, scale)?,
                Err(IvError::Unsupported(_)) => {
                    let accept = |b: f64| -> Result<bool> {
                        let t = run_test(test, variance, data, bundle, a, b, alpha)?;
                        Ok(!t.rejected)
                    };
                    grid_intervals(accept, spec, scale)?
                }
                Err(e) => return Err(e),
            };
            Ok(ConfidenceSet::from_intervals(
                test, variance, alpha, engine, intervals, scale,
            ))
        }
    }
}

fn polynomial_intervals(curve: &StatisticCurve, crit: f64) -> Vec<Interval> {
    let mut breaks: Vec<f64> = curve
        .breakpoint_polynomials(crit)
        .iter()
        .flat_map(|p| real_roots(p))
        .filter(|r| r.is_finite())
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    if breaks.is_empty() {
        return if curve.accepts(0.0, crit) {
            vec![Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            }]
        } else {
            Vec::new()
        };
    }
    // status on each open segment, including the two unbounded ends
    let first = breaks[0];
    let last = breaks[breaks.len() - 1];
    let mut segments = Vec::with_capacity(breaks.len() + 1);
    segments.push((
        f64::NEG_INFINITY,
        first,
        curve.accepts(first - 1.0 - first.abs(), crit),
    ));
    for w in breaks.windows(2) {
        segments.push((w[0], w[1], curve.accepts(0.5 * (w[0] + w[1]), crit)));
    }
    segments.push((
        last,
        f64::INFINITY,
        curve.accepts(last + 1.0 + last.abs(), crit),
    ));

    let mut out: Vec<Interval> = Vec::new();
    for (lo, hi, ok) in segments {
        if !ok {
            continue;
        }
        match out.last_mut() {
            Some(prev) if prev.hi == lo => prev.hi = hi,
            _ => out.push(Interval { lo, hi }),
        }
    }
    out
}

fn grid_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

fn grid_intervals<F>(accept: F, spec: GridSpec, scale: f64) -> Result<Vec<Interval>>
where
    F: Fn(f64) -> Result<bool> + Sync,
{
    let eval = |pts: &[f64]| -> Result<Vec<bool>> { pts.par_iter().map(|&b| accept(b)).collect() };
    let center = 0.5 * (spec.lo + spec.hi);
    let points = grid_points(spec.lo, spec.hi, spec.points);
    let status = eval(&points)?;
    // Components beyond the grid, bounded or not, are found on a
    // geometrically spaced outer grid reaching far into both tails; an
    // accepted outermost point marks that side unbounded.
    let half = spec.hi - center;
    let reach = TAIL_REACH * half.max(center.abs());
    let ratio = (reach / half).powf(1.0 / spec.outer_points.max(1) as f64);
    let offsets: Vec<f64> = (1..=spec.outer_points)
        .map(|k| half * ratio.powi(k as i32))
        .collect();
    let below: Vec<f64> = offsets.iter().rev().map(|d| center - d).collect();
    let above: Vec<f64> = offsets.iter().map(|d| center + d).collect();
    let (st_below, st_above) = (eval(&below)?, eval(&above)?);
    let points: Vec<f64> = below.into_iter().chain(points).chain(above).collect();
    let status: Vec<bool> = st_below.into_iter().chain(status).chain(st_above).collect();
    let (open_lo, open_hi) = (status[0], status[status.len() - 1]);

    let tol = |b: f64| BISECTION_TOLERANCE * b.abs().max(scale);
    let refine = |mut inside: f64, mut outside: f64| -> Result<f64> {
        while (inside - outside).abs() > tol(0.5 * (inside + outside)) {
            let mid = 0.5 * (inside + outside);
            if accept(mid)? {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(0.5 * (inside + outside))
    };

    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    for i in 0..points.len() {
        match (status[i], start) {
            (true, None) => {
                start = Some(if i == 0 {
                    if open_lo {
                        f64::NEG_INFINITY
                    } else {
                        points[0]
                    }
                } else {
                    refine(points[i], points[i - 1])?
                });
            }
            (false, Some(s)) => {
                out.push(Interval {
                    lo: s,
                    hi: refine(points[i - 1], points[i])?,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Interval {
            lo: s,
            hi: if open_hi {
                f64::INFINITY
            } else {
                points[points.len() - 1]
            },
        });
    }
    Ok(out)
}
