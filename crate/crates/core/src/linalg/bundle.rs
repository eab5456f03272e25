use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::qr::{pivoted_qr, PivotedQr, RANK_TOLERANCE};
use crate::data::Dataset;
use crate::error::{IvError, Result};

/// Bound on `‖Q² − Q‖_max` for every stored projection.
pub const IDEMPOTENCY_TOLERANCE: f64 = 1e-9;

/// A symmetric projection with the factorization it was built from.
#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: Array2<f64>,
    pub qr: PivotedQr,
}

impl Projection {
    pub fn rank(&self) -> usize {
        self.qr.rank()
    }

    /// Indices of the columns kept after collinearity pruning.
    pub fn retained(&self) -> &[usize] {
        &self.qr.retained
    }
}

/// Projection onto the column span of `cols`, dropping collinear columns.
pub fn build_projection(cols: ArrayView2<f64>) -> Result<Projection> {
    let qr = pivoted_qr(cols)?;
    if qr.rank() == 0 {
        return Err(IvError::RankZero);
    }
    let matrix = outer_projection(&qr.basis);
    Ok(Projection { matrix, qr })
}

/// `M · V`, where `M` is an annihilator (or any conformable square matrix).
pub fn residualize(v: ArrayView2<f64>, annihilator: ArrayView2<f64>) -> Result<Array2<f64>> {
    if annihilator.nrows() != annihilator.ncols() || annihilator.ncols() != v.nrows() {
        return Err(IvError::Dimension(format!(
            "annihilator is {}x{}, V has {} rows",
            annihilator.nrows(),
            annihilator.ncols(),
            v.nrows()
        )));
    }
    Ok(annihilator.dot(&v))
}

// Q Q', symmetrized so that stored entries are exactly symmetric.
fn outer_projection(basis: &Array2<f64>) -> Array2<f64> {
    let mut p = basis.dot(&basis.t());
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (p[[i, j]] + p[[j, i]]);
            p[[i, j]] = v;
            p[[j, i]] = v;
        }
    }
    p
}

fn identity_minus(p: &Array2<f64>) -> Array2<f64> {
    let mut m = p.mapv(|v| -v);
    for i in 0..m.nrows() {
        m[[i, i]] += 1.0;
    }
    m
}

/// Cached projections for one instrument/control configuration.
///
/// Without controls `p_perp` is `P_Z` and `m_zw` is `M_Z = I − P_Z`.
/// With controls, `p_perp` projects onto `M_W Z` and `m_zw = M_W − P⊥`
/// annihilates `[Z W]`.
#[derive(Debug, Clone)]
pub struct ProjectionBundle {
    p_perp: Array2<f64>,
    m_zw: Array2<f64>,
    m_w: Option<Array2<f64>>,
    p_diag: Array1<f64>,
    m_zw_diag: Array1<f64>,
    m_w_diag: Array1<f64>,
    z_qr: PivotedQr,
    w_retained: Vec<usize>,
    groups: Option<Vec<usize>>,
    p_sq: OnceLock<Array2<f64>>,
    p_tilde_sq: OnceLock<Array2<f64>>,
}

/// Floor on annihilator diagonals used as cross-fit denominators.
pub const MIN_ANNIHILATOR_DIAGONAL: f64 = 1e-10;

impl ProjectionBundle {
    pub fn build(data: &Dataset) -> Result<Self> {
        let w = if data.has_controls() {
            Some(data.w())
        } else {
            None
        };
        Self::from_instruments(data.z(), w)
    }

    pub fn from_instruments(z: ArrayView2<f64>, w: Option<ArrayView2<f64>>) -> Result<Self> {
        let n = z.nrows();
        let z_scale = column_norm_max(z);
        let (z_perp, m_w, w_retained) = match w.filter(|w| w.ncols() > 0) {
            Some(w) => {
                if w.nrows() != n {
                    return Err(IvError::Dimension("Z and W row counts differ".into()));
                }
                let w_proj = build_projection(w)?;
                let qw = &w_proj.qr.basis;
                let z_perp = &z - &qw.dot(&qw.t().dot(&z));
                let m_w = identity_minus(&w_proj.matrix);
                (z_perp, Some(m_w), w_proj.qr.retained.clone())
            }
            None => (z.to_owned(), None, Vec::new()),
        };

        // Prune relative to the original instrument scale, so columns of Z
        // lying in span(W) are dropped rather than kept as rounding noise.
        let z_qr = prune_relative(pivoted_qr(z_perp.view())?, z_scale)?;
        if z_qr.rank() == 0 {
            return Err(IvError::RankZero);
        }
        let p_perp = outer_projection(&z_qr.basis);
        let m_zw = match &m_w {
            Some(m_w) => m_w - &p_perp,
            None => identity_minus(&p_perp),
        };
        let bundle = Self::assemble(p_perp, m_zw, m_w, z_qr, w_retained, None);
        bundle.verify()?;
        Ok(bundle)
    }

    /// Fast path for mutually exclusive group-indicator instruments.
    ///
    /// `P_ij = 1/n_g` when `i` and `j` share group `g` and zero otherwise,
    /// assigned exactly rather than through a factorization.
    pub fn from_groups(labels: &[usize]) -> Result<Self> {
        let n = labels.len();
        let n_groups = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; n_groups];
        for &g in labels {
            sizes[g] += 1;
        }
        let present: Vec<usize> = (0..n_groups).filter(|&g| sizes[g] > 0).collect();
        if present.is_empty() {
            return Err(IvError::RankZero);
        }
        let mut p = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    p[[i, j]] = 1.0 / sizes[labels[i]] as f64;
                }
            }
        }
        let column: Vec<usize> = {
            let mut map = vec![usize::MAX; n_groups];
            for (c, &g) in present.iter().enumerate() {
                map[g] = c;
            }
            labels.iter().map(|&g| map[g]).collect()
        };
        let k = present.len();
        let mut basis = Array2::<f64>::zeros((n, k));
        let mut r = Array2::<f64>::zeros((k, k));
        for (c, &g) in present.iter().enumerate() {
            r[[c, c]] = (sizes[g] as f64).sqrt();
        }
        for i in 0..n {
            basis[[i, column[i]]] = 1.0 / (sizes[labels[i]] as f64).sqrt();
        }
        let z_qr = PivotedQr {
            basis,
            r,
            retained: present,
        };
        let m = identity_minus(&p);
        Ok(Self::assemble(
            p,
            m,
            None,
            z_qr,
            Vec::new(),
            Some(labels.to_vec()),
        ))
    }

    fn assemble(
        p_perp: Array2<f64>,
        m_zw: Array2<f64>,
        m_w: Option<Array2<f64>>,
        z_qr: PivotedQr,
        w_retained: Vec<usize>,
        groups: Option<Vec<usize>>,
    ) -> Self {
        let n = p_perp.nrows();
        let p_diag = p_perp.diag().to_owned();
        let m_zw_diag = m_zw.diag().to_owned();
        let m_w_diag = m_w
            .as_ref()
            .map_or_else(|| Array1::ones(n), |m| m.diag().to_owned());
        Self {
            p_perp,
            m_zw,
            m_w,
            p_diag,
            m_zw_diag,
            m_w_diag,
            z_qr,
            w_retained,
            groups,
            p_sq: OnceLock::new(),
            p_tilde_sq: OnceLock::new(),
        }
    }

    // ‖P² − P‖_max ≤ ‖Q'Q − I‖_F for P = QQ', so the O(N K²) check suffices.
    fn verify(&self) -> Result<()> {
        let q = &self.z_qr.basis;
        let qtq = q.t().dot(q);
        let mut dev: f64 = 0.0;
        for ((i, j), v) in qtq.indexed_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            dev += (v - e) * (v - e);
        }
        let dev = dev.sqrt();
        if dev > IDEMPOTENCY_TOLERANCE {
            return Err(IvError::StructuralCheck {
                property: "idempotency of P",
                deviation: dev,
            });
        }
        let trace_dev = (self.p_diag.sum() - self.k_z() as f64).abs();
        if trace_dev > 1e-8 {
            return Err(IvError::StructuralCheck {
                property: "trace(P) = K_Z",
                deviation: trace_dev,
            });
        }
        if let Some(m_w) = &self.m_w {
            let trace_dev = (m_w.diag().sum() - (self.n() - self.k_w()) as f64).abs();
            if trace_dev > 1e-8 {
                return Err(IvError::StructuralCheck {
                    property: "trace(M_W) = N - K_W",
                    deviation: trace_dev,
                });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.p_perp.nrows()
    }

    /// Effective instrument count (rank of `P⊥`).
    pub fn k_z(&self) -> usize {
        self.z_qr.rank()
    }

    /// Effective control count (rank of `W`).
    pub fn k_w(&self) -> usize {
        self.w_retained.len()
    }

    pub fn has_controls(&self) -> bool {
        self.m_w.is_some()
    }

    /// `P_Z` without controls, `P⊥` with controls.
    pub fn p(&self) -> &Array2<f64> {
        &self.p_perp
    }

    /// `M_Z` without controls, `M_ZW` with controls.
    pub fn m(&self) -> &Array2<f64> {
        &self.m_zw
    }

    /// Annihilator of `W`; `None` stands for the identity.
    pub fn m_w(&self) -> Option<&Array2<f64>> {
        self.m_w.as_ref()
    }

    pub fn p_diag(&self) -> &Array1<f64> {
        &self.p_diag
    }

    pub fn m_diag(&self) -> &Array1<f64> {
        &self.m_zw_diag
    }

    pub fn m_w_diag(&self) -> &Array1<f64> {
        &self.m_w_diag
    }

    /// Factorization of the (residualized) instruments.
    pub fn instrument_qr(&self) -> &PivotedQr {
        &self.z_qr
    }

    pub fn retained_instruments(&self) -> &[usize] {
        &self.z_qr.retained
    }

    pub fn retained_controls(&self) -> &[usize] {
        &self.w_retained
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    /// `P_ij²` with the diagonal set to zero; computed once.
    pub fn squared_offdiag(&self) -> &Array2<f64> {
        self.p_sq.get_or_init(|| {
            let mut w = self.p_perp.mapv(|v| v * v);
            w.diag_mut().fill(0.0);
            w
        })
    }

    /// Index of the first observation whose `M_ii` is at or below the floor.
    pub fn perfectly_fit(&self) -> Option<(usize, f64)> {
        self.m_zw_diag
            .iter()
            .position(|&v| v <= MIN_ANNIHILATOR_DIAGONAL)
            .map(|i| (i, self.m_zw_diag[i]))
    }

    /// Cross-fit weights `P_ij² / (M_ii M_jj + M_ij²)` with zero diagonal.
    pub fn cross_fit_weights(&self) -> Result<&Array2<f64>> {
        if let Some((index, value)) = self.perfectly_fit() {
            return Err(IvError::PerfectFit { index, value });
        }
        Ok(self
            .p_tilde_sq
            .get_or_init(|| cross_fit_weights(&self.p_perp, &self.m_zw, true)))
    }

    /// Applies `M_W` (identity without controls).
    pub fn residualize_controls(&self, v: ndarray::ArrayView1<f64>) -> Array1<f64> {
        match &self.m_w {
            Some(m) => m.dot(&v),
            None => v.to_owned(),
        }
    }
}

/// `B_ij² / (M_ii M_jj + M_ij²)`, optionally with the diagonal zeroed.
pub fn cross_fit_weights(b: &Array2<f64>, m: &Array2<f64>, zero_diagonal: bool) -> Array2<f64> {
    let n = b.nrows();
    let md = m.diag();
    let mut w = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let (brow, mrow) = (b.row(i), m.row(i));
        let mut wrow = w.row_mut(i);
        for j in 0..n {
            let mij = mrow[j];
            wrow[j] = brow[j] * brow[j] / (md[i] * md[j] + mij * mij);
        }
        if zero_diagonal {
            wrow[i] = 0.0;
        }
    }
    w
}

fn column_norm_max(a: ArrayView2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .fold(0.0, f64::max)
}

// Drops trailing pivots whose R diagonal is negligible against `scale`.
fn prune_relative(qr: PivotedQr, scale: f64) -> Result<PivotedQr> {
    let tol = RANK_TOLERANCE * scale;
    let keep = (0..qr.rank())
        .take_while(|&i| qr.r[[i, i]].abs() > tol)
        .count();
    if keep == qr.rank() {
        return Ok(qr);
    }
    Ok(PivotedQr {
        basis: qr.basis.slice(ndarray::s![.., ..keep]).to_owned(),
        r: qr.r.slice(ndarray::s![..keep, ..keep]).to_owned(),
        retained: qr.retained[..keep].to_vec(),
    })
}

/// Leverage report for the `max_i P_ii ≤ δ < 1` balance condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub max_pii: f64,
    pub argmax: usize,
    pub delta: f64,
    pub pass: bool,
    /// Above the 0.9 warning tier but still passing.
    pub warn: bool,
}

pub fn balance_check(bundle: &ProjectionBundle, delta: f64) -> BalanceReport {
    let (argmax, max_pii) =
        bundle
            .p_diag()
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
    let pass = max_pii <= delta && max_pii < 1.0;
    BalanceReport {
        max_pii,
        argmax,
        delta,
        pass,
        warn: pass && max_pii > 0.9,
    }
}
