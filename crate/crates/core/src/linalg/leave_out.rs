use ndarray::{Array1, ArrayView1};

use super::bundle::ProjectionBundle;
use super::qr::{back_substitute, small_inverse};
use crate::error::{IvError, Result};

/// Floor on `det(M_SS)`, the ratio of downdated to full Gram determinants.
pub const RANK_COLLAPSE_FLOOR: f64 = 1e-12;

/// Quantities of the instrument regression with up to three rows removed,
/// obtained from full-sample projections by Sherman–Morrison–Woodbury.
///
/// With `S` the dropped set and `M = I − P`:
/// `P̃_ab = P_ab + P_aS (M_SS)⁻¹ P_Sb`.
#[derive(Debug, Clone)]
pub struct LeaveOut<'a> {
    bundle: &'a ProjectionBundle,
    dropped: Vec<usize>,
    m_inv: [[f64; 3]; 3],
}

pub fn leave_out<'a>(bundle: &'a ProjectionBundle, drop: &[usize]) -> Result<LeaveOut<'a>> {
    if drop.len() > 3 {
        return Err(IvError::Unsupported(format!(
            "leave-out downdates support at most 3 rows, got {}",
            drop.len()
        )));
    }
    let n = bundle.n();
    for (a, &i) in drop.iter().enumerate() {
        if i >= n || drop[..a].contains(&i) {
            return Err(IvError::Dimension(format!("invalid drop set {drop:?}")));
        }
    }
    let p = bundle.p();
    let mut m_ss = [[0.0; 3]; 3];
    for (a, &i) in drop.iter().enumerate() {
        for (b, &j) in drop.iter().enumerate() {
            m_ss[a][b] = if i == j { 1.0 } else { 0.0 } - p[[i, j]];
        }
    }
    let (det, m_inv) = small_inverse(&m_ss, drop.len()).expect("size checked above");
    if det <= RANK_COLLAPSE_FLOOR {
        return Err(IvError::RankCollapse {
            dropped: drop.to_vec(),
        });
    }
    Ok(LeaveOut {
        bundle,
        dropped: drop.to_vec(),
        m_inv,
    })
}

impl<'a> LeaveOut<'a> {
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// `Z_a' (Σ_{l∉S} Z_l Z_l')⁻¹ Z_b`.
    pub fn projection(&self, a: usize, b: usize) -> f64 {
        let p = self.bundle.p();
        let mut v = p[[a, b]];
        for (s, &i) in self.dropped.iter().enumerate() {
            for (t, &j) in self.dropped.iter().enumerate() {
                v += p[[a, i]] * self.m_inv[s][t] * p[[j, b]];
            }
        }
        v
    }

    /// Element `(a, b)` of the reduced-sample annihilator, `δ_ab − P̃_ab`.
    pub fn annihilator(&self, a: usize, b: usize) -> f64 {
        let d = if a == b { 1.0 } else { 0.0 };
        d - self.projection(a, b)
    }

    /// `v_j − Z_j' δ̂_{−S}` where `δ̂_{−S}` regresses `v` on the instruments
    /// without the dropped rows. `mv` must be the full-sample residual `M v`.
    pub fn residual(&self, j: usize, mv: &[f64]) -> f64 {
        let p = self.bundle.p();
        let mut v = mv[j];
        for (s, &i) in self.dropped.iter().enumerate() {
            let mut w = 0.0;
            for (t, &k) in self.dropped.iter().enumerate() {
                w += self.m_inv[s][t] * mv[k];
            }
            v += p[[j, i]] * w;
        }
        v
    }

    /// Leave-out regression coefficients of `v` on the retained instrument
    /// columns (in [`ProjectionBundle::retained_instruments`] order).
    pub fn coefficients(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let qr = self.bundle.instrument_qr();
        let q = &qr.basis;
        let mv = &v - &self.bundle.p().dot(&v);
        let mut rhs = q.t().dot(&v);
        for (s, &i) in self.dropped.iter().enumerate() {
            let mut w = 0.0;
            for (t, &k) in self.dropped.iter().enumerate() {
                w += self.m_inv[s][t] * mv[k];
            }
            rhs.scaled_add(-w, &q.row(i));
        }
        back_substitute(&qr.r, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_drop_is_full_sample() {
        let b = ProjectionBundle::from_groups(&[0, 0, 0, 1, 1]).unwrap();
        let lo = leave_out(&b, &[]).unwrap();
        assert_eq!(lo.projection(0, 1), b.p()[[0, 1]]);
        assert_eq!(lo.annihilator(3, 3), b.m()[[3, 3]]);
    }

    #[test]
    fn singleton_group_collapses() {
        let b = ProjectionBundle::from_groups(&[0, 0, 1, 2, 2]).unwrap();
        assert_eq!(
            leave_out(&b, &[2]).unwrap_err(),
            IvError::RankCollapse { dropped: vec![2] }
        );
        // dropping both members of a pair collapses too
        assert!(leave_out(&b, &[3, 4]).is_err());
        assert!(leave_out(&b, &[0, 3]).is_ok());
    }

    #[test]
    fn group_downdate_by_hand() {
        // group of 3 with one dropped: remaining pair has P̃ = 1/2
        let b = ProjectionBundle::from_groups(&[0, 0, 0, 1, 1]).unwrap();
        let lo = leave_out(&b, &[2]).unwrap();
        assert!((lo.projection(0, 1) - 0.5).abs() < 1e-15);
        assert!((lo.projection(0, 0) - 0.5).abs() < 1e-15);
        assert!((lo.projection(3, 4) - 0.5).abs() < 1e-15);
    }
}
