use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IvError, Result};
use crate::estimators::EstimatorId;
use crate::inference::TestId;
use crate::variance::VarianceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Balanced group-indicator instruments, no controls.
    Groups,
    /// Many instruments and many controls.
    Controls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstStage {
    /// One large coefficient (2) on the last instrument, 0.001 elsewhere.
    Sparse,
    /// Equal coefficients (0.316).
    Dense,
    /// No first-stage signal.
    Zero,
    Custom(Vec<f64>),
}

impl FirstStage {
    /// Pre-scaling coefficient shape for `k` instruments.
    pub fn shape(&self, k: usize) -> Result<Vec<f64>> {
        match self {
            FirstStage::Sparse => {
                let mut pi = vec![0.001; k];
                if let Some(last) = pi.last_mut() {
                    *last = 2.0;
                }
                Ok(pi)
            }
            FirstStage::Dense => Ok(vec![0.316; k]),
            FirstStage::Zero => Ok(vec![0.0; k]),
            FirstStage::Custom(pi) if pi.len() == k => Ok(pi.clone()),
            FirstStage::Custom(pi) => Err(IvError::Design(format!(
                "custom first stage has {} coefficients, expected {k}",
                pi.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heteroskedasticity {
    None,
    /// Structural error scaled by `|ζ_i|`, `ζ_i` standard normal, fixed per design.
    AbsNormal,
}

/// One test statistic to simulate, with its normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatSpec {
    pub test: TestId,
    pub variance: Option<VarianceId>,
}

impl StatSpec {
    pub fn new(test: TestId, variance: Option<VarianceId>) -> Self {
        StatSpec { test, variance }
    }

    /// `ar(phi2)`-style label; bare test name when the normalizer is implied.
    pub fn label(&self) -> String {
        match self.variance {
            Some(v) => format!("{}({})", self.test, v),
            None => self.test.to_string(),
        }
    }

    /// Accepts `ar:phi2`, `ar(phi2)` or a bare test name.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (t, v) = if let Some((t, v)) = s.split_once(':') {
            (t, Some(v))
        } else if let Some(open) = s.find('(') {
            let inner = s[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| IvError::Design(format!("unbalanced statistic label {s:?}")))?;
            (&s[..open], Some(inner))
        } else {
            (s, None)
        };
        let test = TestId::parse(t.trim())
            .ok_or_else(|| IvError::Design(format!("unknown statistic {t:?}")))?;
        let variance = match v {
            Some(v) => Some(
                VarianceId::parse(v.trim())
                    .ok_or_else(|| IvError::Design(format!("unknown normalizer {v:?}")))?,
            ),
            None => match test {
                TestId::Ar => Some(VarianceId::Phi2),
                TestId::Lm => Some(VarianceId::Psi2),
                _ => None,
            },
        };
        Ok(StatSpec { test, variance })
    }
}

impl fmt::Display for StatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// A simulation design: data-generating process, replication count, seed
/// and the statistics and estimators to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub name: String,
    pub kind: DesignKind,
    pub n: usize,
    pub k_z: usize,
    pub k_w: usize,
    pub first_stage: FirstStage,
    /// Target `μ²/√K_Z`, with `μ²` the diagonal-free concentration.
    pub strength: f64,
    pub rho: f64,
    pub beta: f64,
    pub heteroskedasticity: Heteroskedasticity,
    /// Loading of the first-stage error in the structural error
    /// (controls design).
    pub error_loading: f64,
    /// Level counts of the categorical controls (controls design).
    pub categorical_levels: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub delta_grid: Vec<f64>,
    pub alpha: f64,
    pub statistics: Vec<StatSpec>,
    pub estimators: Vec<EstimatorId>,
}

const KEYS: &[&str] = &[
    "name",
    "kind",
    "n",
    "k_z",
    "k_w",
    "first_stage",
    "pi",
    "strength",
    "rho",
    "beta",
    "heteroskedasticity",
    "error_loading",
    "categorical_levels",
    "reps",
    "seed",
    "delta_grid",
    "alpha",
    "statistics",
    "estimators",
];

impl SimDesign {
    /// Balanced groups of five, `N = 200`, `K = 40`, strength 2.5, `ρ = 0.2`.
    pub fn groups(first_stage: FirstStage) -> Self {
        SimDesign {
            name: "groups".into(),
            kind: DesignKind::Groups,
            n: 200,
            k_z: 40,
            k_w: 0,
            first_stage,
            strength: 2.5,
            rho: 0.2,
            beta: 0.0,
            heteroskedasticity: Heteroskedasticity::None,
            error_loading: 0.0,
            categorical_levels: Vec::new(),
            reps: 1000,
            seed: 20_240_601,
            delta_grid: (-8..=8).map(|i| i as f64 * 0.25).collect(),
            alpha: 0.05,
            statistics: vec![
                StatSpec::new(TestId::Ar, Some(VarianceId::Phi1)),
                StatSpec::new(TestId::Ar, Some(VarianceId::Phi2)),
            ],
            estimators: Vec::new(),
        }
    }

    /// `N = 1669`, `K_Z = 48`, `K_W = 119` with categorical and continuous
    /// controls, `β = 0.6` and structural error `|ζ_i| (ε_i − 1.5 v_i)`.
    pub fn many_controls() -> Self {
        SimDesign {
            name: "controls".into(),
            kind: DesignKind::Controls,
            n: 1669,
            k_z: 48,
            k_w: 119,
            first_stage: FirstStage::Dense,
            strength: 60.0,
            rho: 0.0,
            beta: 0.6,
            heteroskedasticity: Heteroskedasticity::AbsNormal,
            error_loading: -1.5,
            categorical_levels: vec![6, 7, 52],
            reps: 1000,
            seed: 20_240_602,
            delta_grid: vec![0.0],
            alpha: 0.05,
            statistics: vec![
                StatSpec::new(TestId::ArResidualized, None),
                StatSpec::new(TestId::ArRaw, None),
                StatSpec::new(TestId::ArW, None),
            ],
            estimators: vec![
                EstimatorId::Beta1Ijive,
                EstimatorId::Beta2Naive,
                EstimatorId::Beta3,
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IvError::Design(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (-1, 1), got {}", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return bad(format!(
                "strength must be non-negative, got {}",
                self.strength
            ));
        }
        if self.k_z == 0 {
            return bad("k_z must be positive".into());
        }
        if self.delta_grid.iter().any(|d| !d.is_finite()) {
            return bad("delta_grid must be finite".into());
        }
        match self.kind {
            DesignKind::Groups => {
                if !self.n.is_multiple_of(self.k_z) || self.n / self.k_z < 2 {
                    return bad(format!(
                        "n = {} must be a multiple of k_z = {} with groups of at least 2",
                        self.n, self.k_z
                    ));
                }
                if self.k_w != 0 {
                    return bad("the group design has no controls; set k_w = 0".into());
                }
                if self
                    .statistics
                    .iter()
                    .any(|s| !matches!(s.test, TestId::Ar | TestId::Lm))
                {
                    return bad("the group design supports the ar and lm statistics".into());
                }
            }
            DesignKind::Controls => {
                let dummies: usize = self.categorical_levels.iter().map(|l| l - 1).sum();
                if self.categorical_levels.iter().any(|&l| l < 2) {
                    return bad("categorical controls need at least 2 levels".into());
                }
                if self.k_w < 1 + dummies {
                    return bad(format!(
                        "k_w = {} cannot hold an intercept and {dummies} dummies",
                        self.k_w
                    ));
                }
                if self.n <= self.k_z + self.k_w {
                    return bad("n must exceed k_z + k_w".into());
                }
                if self.statistics.iter().any(|s| s.test == TestId::Lm)
                    || self.statistics.iter().any(|s| s.test == TestId::Ar)
                {
                    return bad(
                        "the controls design supports the arw, ar1 and ar2 statistics".into(),
                    );
                }
            }
        }
        Ok(())
    }

    /// Parses strict `key = value` text. Blank lines and `#` comments are
    /// skipped; lists are comma separated; unknown or repeated keys fail.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                IvError::Design(format!("line {}: expected `key = value`", no + 1))
            })?;
            let k = k.trim().to_string();
            if !KEYS.contains(&k.as_str()) {
                return Err(IvError::Design(format!(
                    "line {}: unknown key {k:?}",
                    no + 1
                )));
            }
            if pairs.iter().any(|(p, _)| *p == k) {
                return Err(IvError::Design(format!(
                    "line {}: repeated key {k:?}",
                    no + 1
                )));
            }
            pairs.push((k, v.trim().to_string()));
        }
        let get = |k: &str| pairs.iter().find(|(p, _)| p == k).map(|(_, v)| v.as_str());
        let kind = match get("kind").unwrap_or("groups") {
            "groups" => DesignKind::Groups,
            "controls" => DesignKind::Controls,
            other => return Err(IvError::Design(format!("unknown kind {other:?}"))),
        };
        let first_stage_default = match kind {
            DesignKind::Groups => FirstStage::Dense,
            DesignKind::Controls => FirstStage::Dense,
        };
        let mut d = match kind {
            DesignKind::Groups => SimDesign::groups(first_stage_default),
            DesignKind::Controls => SimDesign::many_controls(),
        };
        if let Some(v) = get("name") {
            d.name = v.to_string();
        }
        if let Some(v) = get("n") {
            d.n = parse_num(v, "n")?;
        }
        if let Some(v) = get("k_z") {
            d.k_z = parse_num(v, "k_z")?;
        }
        if let Some(v) = get("k_w") {
            d.k_w = parse_num(v, "k_w")?;
        }
        match (get("first_stage"), get("pi")) {
            (Some("custom"), Some(pi)) | (None, Some(pi)) => {
                d.first_stage = FirstStage::Custom(parse_list(pi, "pi")?);
            }
            (Some("custom"), None) => {
                return Err(IvError::Design("first_stage = custom needs pi".into()))
            }
            (Some(_), Some(_)) => {
                return Err(IvError::Design(
                    "pi is only valid with first_stage = custom".into(),
                ))
            }
            (Some(v), None) => {
                d.first_stage = match v {
                    "sparse" => FirstStage::Sparse,
                    "dense" => FirstStage::Dense,
                    "zero" => FirstStage::Zero,
                    other => return Err(IvError::Design(format!("unknown first_stage {other:?}"))),
                }
            }
            (None, None) => {}
        }
        if let Some(v) = get("strength") {
            d.strength = parse_num(v, "strength")?;
        }
        if let Some(v) = get("rho") {
            d.rho = parse_num(v, "rho")?;
        }
        if let Some(v) = get("beta") {
            d.beta = parse_num(v, "beta")?;
        }
        if let Some(v) = get("heteroskedasticity") {
            d.heteroskedasticity = match v {
                "none" => Heteroskedasticity::None,
                "abs_normal" => Heteroskedasticity::AbsNormal,
                other => {
                    return Err(IvError::Design(format!(
                        "unknown heteroskedasticity {other:?}"
                    )))
                }
            };
        }
        if let Some(v) = get("error_loading") {
            d.error_loading = parse_num(v, "error_loading")?;
        }
        if let Some(v) = get("categorical_levels") {
            d.categorical_levels = if v.is_empty() {
                Vec::new()
            } else {
                parse_list(v, "categorical_levels")?
            };
        }
        if let Some(v) = get("reps") {
            d.reps = parse_num(v, "reps")?;
        }
        if let Some(v) = get("seed") {
            d.seed = parse_num(v, "seed")?;
        }
        if let Some(v) = get("delta_grid") {
            d.delta_grid = parse_list(v, "delta_grid")?;
        }
        if let Some(v) = get("alpha") {
            d.alpha = parse_num(v, "alpha")?;
        }
        if let Some(v) = get("statistics") {
            d.statistics = split_list(v)
                .map(StatSpec::parse)
                .collect::<Result<Vec<_>>>()?;
        }
        if let Some(v) = get("estimators") {
            d.estimators = split_list(v)
                .map(|s| {
                    EstimatorId::parse(s)
                        .ok_or_else(|| IvError::Design(format!("unknown estimator {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
        }
        d.validate()?;
        Ok(d)
    }

    /// Renders the design in the format accepted by [`SimDesign::parse`].
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("name", self.name.clone());
        put(
            "kind",
            match self.kind {
                DesignKind::Groups => "groups",
                DesignKind::Controls => "controls",
            }
            .into(),
        );
        put("n", self.n.to_string());
        put("k_z", self.k_z.to_string());
        put("k_w", self.k_w.to_string());
        match &self.first_stage {
            FirstStage::Sparse => put("first_stage", "sparse".into()),
            FirstStage::Dense => put("first_stage", "dense".into()),
            FirstStage::Zero => put("first_stage", "zero".into()),
            FirstStage::Custom(pi) => {
                put("first_stage", "custom".into());
                put("pi", list(pi));
            }
        }
        put("strength", format!("{}", self.strength));
        put("rho", format!("{}", self.rho));
        put("beta", format!("{}", self.beta));
        put(
            "heteroskedasticity",
            match self.heteroskedasticity {
                Heteroskedasticity::None => "none",
                Heteroskedasticity::AbsNormal => "abs_normal",
            }
            .into(),
        );
        put("error_loading", format!("{}", self.error_loading));
        put(
            "categorical_levels",
            self.categorical_levels
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        put("reps", self.reps.to_string());
        put("seed", self.seed.to_string());
        put("delta_grid", list(&self.delta_grid));
        put("alpha", format!("{}", self.alpha));
        put(
            "statistics",
            self.statistics
                .iter()
                .map(|s| match s.variance {
                    Some(v) => format!("{}:{}", s.test, v),
                    None => s.test.to_string(),
                })
                .collect::<Vec<_>>()
                .join(", "),
        );
        put(
            "estimators",
            self.estimators
                .iter()
                .map(|e| e.name().to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        out
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| IvError::Design(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    split_list(v).map(|s| parse_num(s, key)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for d in [
            SimDesign::groups(FirstStage::Sparse),
            SimDesign::groups(FirstStage::Custom(vec![0.5; 40])),
            SimDesign::many_controls(),
        ] {
            let back = SimDesign::parse(&d.to_text()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn strict_parsing() {
        assert!(SimDesign::parse("colour = blue").is_err());
        assert!(SimDesign::parse("reps = 10\nreps = 20").is_err());
        assert!(SimDesign::parse("reps").is_err());
        assert!(SimDesign::parse("reps = ten").is_err());
        assert!(SimDesign::parse("n = 201").is_err());
        assert!(SimDesign::parse("rho = 1").is_err());
        let d = SimDesign::parse("# comment\n\nfirst_stage = sparse\nreps = 5\n").unwrap();
        assert_eq!(d.first_stage, FirstStage::Sparse);
        assert_eq!(d.reps, 5);
    }

    #[test]
    fn statistic_labels() {
        let s = StatSpec::parse("ar(phi1)").unwrap();
        assert_eq!(s, StatSpec::new(TestId::Ar, Some(VarianceId::Phi1)));
        assert_eq!(
            StatSpec::parse("lm").unwrap().variance,
            Some(VarianceId::Psi2)
        );
        assert_eq!(StatSpec::parse("arw").unwrap().label(), "arw");
        assert!(StatSpec::parse("ar:psi9").is_err());
    }

    #[test]
    fn sparse_shape() {
        let pi = FirstStage::Sparse.shape(40).unwrap();
        assert_eq!(pi[39], 2.0);
        assert_eq!(pi[0], 0.001);
    }
}
