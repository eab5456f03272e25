//! The structured report: a versioned JSON schema plus text and CSV views.
//!
//! Every number printed by the text view is read from these structs, so a
//! report re-read from JSON prints identically.

use std::fmt::Write as _;

use manyiv_core::estimators::EstimateOutcome;
use manyiv_core::inference::{BalanceReport, Identification, PretestOutcome};
use manyiv_core::montecarlo::SimReport;
use manyiv_core::{ConfidenceSet, Interval, TestFlag, TestOutcome};
use serde::{Deserialize, Serialize};

use crate::ingest::DataSummary;

pub const SCHEMA_VERSION: u32 = 1;

/// `None` for NaN and infinities, which JSON cannot carry as numbers.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub alpha: f64,
    pub data: Option<DataSummary>,
    pub pretest: Option<PretestSection>,
    pub estimates: Vec<EstimateRow>,
    pub tests: Vec<TestRow>,
    pub confidence_sets: Vec<SetRow>,
    pub assumption_check: Option<AssumptionSection>,
    pub simulation: Option<SimulationSection>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestSection {
    pub first_stage_f: Option<f64>,
    pub ftilde: Option<f64>,
    pub upsilon: Option<f64>,
    pub cutoff: f64,
    pub strong: bool,
    pub approximate: bool,
}

impl From<&PretestOutcome> for PretestSection {
    fn from(p: &PretestOutcome) -> Self {
        PretestSection {
            first_stage_f: finite(p.first_stage_f),
            ftilde: finite(p.ftilde),
            upsilon: finite(p.upsilon),
            cutoff: p.cutoff,
            strong: p.decision == Identification::Strong,
            approximate: p.approximate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: String,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    /// Wald interval at the report's level, when a standard error exists.
    pub wald: Option<Interval>,
    /// `Some(false)` when the pre-test does not certify the t-test.
    pub reliable: Option<bool>,
    pub notes: Vec<String>,
}

impl EstimateRow {
    pub fn new(e: &EstimateOutcome, z: f64) -> Self {
        EstimateRow {
            estimator: e.estimator.name().into(),
            estimate: finite(e.beta_hat),
            std_error: e.std_error.and_then(finite),
            wald: e.wald_interval(z).map(|(lo, hi)| Interval { lo, hi }),
            reliable: None,
            notes: e.notes.clone(),
        }
    }

    pub fn failed(estimator: &str, why: String) -> Self {
        EstimateRow {
            estimator: estimator.into(),
            estimate: None,
            std_error: None,
            wald: None,
            reliable: None,
            notes: vec![why],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub statistic: String,
    pub beta0: f64,
    pub value: f64,
    pub p_value: f64,
    pub rejected: bool,
    pub normalizer: Option<f64>,
    pub flags: Vec<String>,
}

fn flag_text(f: &TestFlag) -> String {
    match f {
        TestFlag::DegenerateNormalizer => "degenerate normalizer; not rejected".into(),
        TestFlag::PerfectFitAtBeta0 => "implied errors are zero at beta0".into(),
        TestFlag::AssumptionViolation(s) => format!("assumption violated: {s}"),
    }
}

impl TestRow {
    pub fn new(label: String, t: &TestOutcome) -> Self {
        TestRow {
            statistic: label,
            beta0: t.beta0,
            value: t.statistic,
            p_value: t.p_value,
            rejected: t.rejected,
            normalizer: finite(t.normalizer.value),
            flags: t.flags.iter().map(flag_text).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetRow {
    pub method: String,
    pub intervals: Vec<Interval>,
    pub bounded: bool,
    pub empty: bool,
    pub notes: Vec<String>,
}

impl SetRow {
    pub fn new(label: String, c: &ConfidenceSet) -> Self {
        SetRow {
            method: label,
            intervals: c.intervals.clone(),
            bounded: c.is_bounded(),
            empty: c.empty,
            notes: c.notes.clone(),
        }
    }

    pub fn interval(label: String, lo: f64, hi: f64) -> Self {
        SetRow {
            method: label,
            intervals: vec![Interval { lo, hi }],
            bounded: lo.is_finite() && hi.is_finite(),
            empty: false,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionSection {
    pub pass: bool,
    pub warn: bool,
    pub min_m_w_diag: Option<f64>,
    pub min_theta: Option<f64>,
    pub max_leverage_ratio: Option<f64>,
    pub delta: f64,
    pub violations: Vec<String>,
}

impl From<&BalanceReport> for AssumptionSection {
    fn from(r: &BalanceReport) -> Self {
        AssumptionSection {
            pass: r.pass,
            warn: r.warn,
            min_m_w_diag: finite(r.min_m_w_diag),
            min_theta: finite(r.min_theta),
            max_leverage_ratio: finite(r.max_leverage_ratio),
            delta: r.delta,
            violations: r.violations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub statistic: String,
    pub delta: f64,
    pub beta0: f64,
    pub rejections: usize,
    pub valid: usize,
    pub degenerate: usize,
    pub errors: usize,
    pub rate: Option<f64>,
    pub mc_se: Option<f64>,
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub estimator: String,
    pub bias: Option<f64>,
    pub relative: bool,
    pub mc_se: Option<f64>,
    pub median_bias: Option<f64>,
    pub valid: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSection {
    pub design: String,
    pub reps: usize,
    pub seed: u64,
    pub mu2: Option<f64>,
    pub realized_strength: Option<f64>,
    pub rejection: Vec<SimRow>,
    pub bias: Vec<BiasEntry>,
    pub notes: Vec<String>,
    pub runtime_seconds: f64,
}

impl From<&SimReport> for SimulationSection {
    fn from(r: &SimReport) -> Self {
        SimulationSection {
            design: r.design.name.clone(),
            reps: r.design.reps,
            seed: r.design.seed,
            mu2: finite(r.mu2),
            realized_strength: finite(r.realized_strength),
            rejection: r
                .rejection
                .iter()
                .map(|x| SimRow {
                    statistic: x.statistic.clone(),
                    delta: x.delta,
                    beta0: x.beta0,
                    rejections: x.rejections,
                    valid: x.valid,
                    degenerate: x.degenerate,
                    errors: x.errors,
                    rate: finite(x.rate),
                    mc_se: finite(x.mc_se),
                    predicted: x.predicted.and_then(finite),
                })
                .collect(),
            bias: r
                .bias
                .iter()
                .map(|b| BiasEntry {
                    estimator: b.estimator.name().into(),
                    bias: finite(b.bias),
                    relative: b.relative,
                    mc_se: finite(b.mc_se),
                    median_bias: finite(b.median_bias),
                    valid: b.valid,
                    errors: b.errors,
                })
                .collect(),
            notes: r.notes.clone(),
            runtime_seconds: r.runtime_seconds,
        }
    }
}

impl Report {
    pub fn new(command: &str, alpha: f64) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            alpha,
            data: None,
            pretest: None,
            estimates: Vec::new(),
            tests: Vec::new(),
            confidence_sets: Vec::new(),
            assumption_check: None,
            simulation: None,
            warnings: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.assumption_check.as_ref().is_some_and(|a| !a.pass) {
            out.push_str(
                "WARNING: the design violates the balance conditions of the many-controls test\n\n",
            );
        }
        if let Some(d) = &self.data {
            let _ = writeln!(
                out,
                "Data: {} (N = {}, K_Z = {}, K_W = {}; {} rows read, {} rejected)",
                d.path, d.n, d.k_z, d.k_w, d.rows_read, d.rows_rejected
            );
            let _ = writeln!(out, "  outcome {}, endogenous {}", d.outcome, d.endogenous);
            out.push('\n');
        }
        if let Some(p) = &self.pretest {
            out.push_str("Identification pre-test\n");
            let _ = writeln!(
                out,
                "  {:<26}{}",
                "first-stage F (FF)",
                num(p.first_stage_f)
            );
            let _ = writeln!(
                out,
                "  {:<26}{}  (cutoff {}: {}{})",
                "F-tilde",
                num(p.ftilde),
                p.cutoff,
                if p.strong { "strong" } else { "weak" },
                if p.approximate {
                    ", controls partialled out"
                } else {
                    ""
                }
            );
            out.push('\n');
        }
        if !self.estimates.is_empty() {
            let _ = writeln!(
                out,
                "Estimates\n  {:<10}{:>14}{:>14}   {:.0}% Wald interval",
                "estimator",
                "estimate",
                "std. error",
                100.0 * (1.0 - self.alpha)
            );
            for e in &self.estimates {
                let _ = writeln!(
                    out,
                    "  {:<10}{:>14}{:>14}   {}{}",
                    e.estimator,
                    num(e.estimate),
                    num(e.std_error),
                    e.wald.map_or_else(|| "-".into(), |i| intervals(&[i])),
                    if e.reliable == Some(false) {
                        "  (unreliable: weak identification)"
                    } else {
                        ""
                    }
                );
            }
            out.push('\n');
        }
        if !self.tests.is_empty() {
            let _ = writeln!(
                out,
                "Tests\n  {:<14}{:>12}{:>14}{:>12}  decision",
                "statistic", "beta0", "value", "p-value"
            );
            for t in &self.tests {
                let _ = writeln!(
                    out,
                    "  {:<14}{:>12}{:>14}{:>12}  {}",
                    t.statistic,
                    fmt(t.beta0),
                    fmt(t.value),
                    fmt(t.p_value),
                    if t.rejected {
                        "reject"
                    } else {
                        "do not reject"
                    }
                );
                for f in &t.flags {
                    let _ = writeln!(out, "    note: {f}");
                }
            }
            out.push('\n');
        }
        if !self.confidence_sets.is_empty() {
            let _ = writeln!(out, "Confidence sets ({:.0}%)", 100.0 * (1.0 - self.alpha));
            for s in &self.confidence_sets {
                let _ = writeln!(out, "  {:<14}{}", s.method, intervals(&s.intervals));
                for n in &s.notes {
                    let _ = writeln!(out, "    note: {n}");
                }
            }
            out.push('\n');
        }
        if let Some(a) = &self.assumption_check {
            out.push_str("Balance conditions for the many-controls test\n");
            let _ = writeln!(out, "  {:<26}{}", "min M_W,ii", num(a.min_m_w_diag));
            let _ = writeln!(out, "  {:<26}{}", "min theta", num(a.min_theta));
            let _ = writeln!(
                out,
                "  {:<26}{}  (bound {})",
                "max P_ii / M_W,ii^2",
                num(a.max_leverage_ratio),
                a.delta
            );
            let _ = writeln!(
                out,
                "  {:<26}{}",
                "status",
                if a.pass {
                    if a.warn {
                        "pass (near the bound)"
                    } else {
                        "pass"
                    }
                } else {
                    "FAIL"
                }
            );
            for v in &a.violations {
                let _ = writeln!(out, "    violation: {v}");
            }
            out.push('\n');
        }
        if let Some(s) = &self.simulation {
            let _ = writeln!(
                out,
                "Simulation {} ({} reps, seed {}, mu2 = {}, mu2/sqrt(K) = {})",
                s.design,
                s.reps,
                s.seed,
                num(s.mu2),
                num(s.realized_strength)
            );
            if !s.rejection.is_empty() {
                let _ = writeln!(
                    out,
                    "  {:<12}{:>9}{:>10}{:>10}{:>11}",
                    "statistic", "delta", "rate", "mc se", "predicted"
                );
                for r in &s.rejection {
                    let _ = writeln!(
                        out,
                        "  {:<12}{:>9}{:>10}{:>10}{:>11}",
                        r.statistic,
                        fmt(r.delta),
                        num(r.rate),
                        num(r.mc_se),
                        num(r.predicted)
                    );
                }
            }
            if !s.bias.is_empty() {
                let _ = writeln!(
                    out,
                    "  {:<12}{:>12}{:>10}{:>14}",
                    "estimator", "bias", "mc se", "median bias"
                );
                for b in &s.bias {
                    let _ = writeln!(
                        out,
                        "  {:<12}{:>12}{:>10}{:>14}{}",
                        b.estimator,
                        num(b.bias),
                        num(b.mc_se),
                        num(b.median_bias),
                        if b.relative { "  (relative)" } else { "" }
                    );
                }
            }
            for n in &s.notes {
                let _ = writeln!(out, "  note: {n}");
            }
            out.push('\n');
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        for e in &self.errors {
            let _ = writeln!(out, "error: {e}");
        }
        out
    }

    /// Long format `section,item,field,value`; simulations use
    /// [`Report::simulation_csv`].
    pub fn to_csv(&self) -> String {
        if self.simulation.is_some() {
            return self.simulation_csv();
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut put = |s: &str, i: &str, f: &str, v: String| {
            w.write_record([s, i, f, v.as_str()])
                .expect("in-memory write");
        };
        put("section", "item", "field", "value".into());
        if let Some(p) = &self.pretest {
            put("pretest", "", "first_stage_f", opt(p.first_stage_f));
            put("pretest", "", "ftilde", opt(p.ftilde));
            put("pretest", "", "cutoff", p.cutoff.to_string());
            put("pretest", "", "strong", p.strong.to_string());
        }
        for e in &self.estimates {
            put("estimate", &e.estimator, "estimate", opt(e.estimate));
            put("estimate", &e.estimator, "std_error", opt(e.std_error));
            if let Some(i) = e.wald {
                put("estimate", &e.estimator, "wald_lo", i.lo.to_string());
                put("estimate", &e.estimator, "wald_hi", i.hi.to_string());
            }
        }
        for t in &self.tests {
            put("test", &t.statistic, "beta0", t.beta0.to_string());
            put("test", &t.statistic, "value", t.value.to_string());
            put("test", &t.statistic, "p_value", t.p_value.to_string());
            put("test", &t.statistic, "rejected", t.rejected.to_string());
        }
        for s in &self.confidence_sets {
            for (k, i) in s.intervals.iter().enumerate() {
                put(
                    "confidence_set",
                    &s.method,
                    &format!("lo{k}"),
                    i.lo.to_string(),
                );
                put(
                    "confidence_set",
                    &s.method,
                    &format!("hi{k}"),
                    i.hi.to_string(),
                );
            }
            if s.empty {
                put("confidence_set", &s.method, "empty", "true".into());
            }
        }
        if let Some(a) = &self.assumption_check {
            put("assumption_check", "", "pass", a.pass.to_string());
            put(
                "assumption_check",
                "",
                "max_leverage_ratio",
                opt(a.max_leverage_ratio),
            );
        }
        for m in &self.warnings {
            put("warning", "", "", m.clone());
        }
        finish(w)
    }

    /// One row per statistic and `Δ`, then one per estimator.
    pub fn simulation_csv(&self) -> String {
        let Some(s) = &self.simulation else {
            return String::new();
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "statistic",
            "delta",
            "beta0",
            "rejections",
            "valid",
            "degenerate",
            "errors",
            "rate",
            "mc_se",
            "predicted",
        ])
        .expect("in-memory write");
        for r in &s.rejection {
            w.write_record([
                r.statistic.clone(),
                r.delta.to_string(),
                r.beta0.to_string(),
                r.rejections.to_string(),
                r.valid.to_string(),
                r.degenerate.to_string(),
                r.errors.to_string(),
                opt(r.rate),
                opt(r.mc_se),
                opt(r.predicted),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    /// Bias rows, or `None` when the design has no estimators.
    pub fn bias_csv(&self) -> Option<String> {
        let s = self.simulation.as_ref().filter(|s| !s.bias.is_empty())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "estimator",
            "bias",
            "relative",
            "mc_se",
            "median_bias",
            "valid",
            "errors",
        ])
        .expect("in-memory write");
        for b in &s.bias {
            w.write_record([
                b.estimator.clone(),
                opt(b.bias),
                b.relative.to_string(),
                opt(b.mc_se),
                opt(b.median_bias),
                b.valid.to_string(),
                b.errors.to_string(),
            ])
            .expect("in-memory write");
        }
        Some(finish(w))
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if v != 0.0 && (v.abs() >= 1e6 || v.abs() < 1e-4) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), fmt)
}

fn intervals(set: &[Interval]) -> String {
    if set.is_empty() {
        return "empty".into();
    }
    set.iter()
        .map(|i| format!("[{}, {}]", fmt(i.lo), fmt(i.hi)))
        .collect::<Vec<_>>()
        .join(" U ")
}
