//! Real roots of low-degree polynomials.
//!
//! Roots are isolated recursively: the critical points of `p` (roots of
//! `p'`) split the line into monotone pieces, each holding at most one root,
//! which is then located by bisection.

use super::curve::horner;

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(i, v)| i as f64 * v)
        .collect()
}

fn trim(c: &[f64]) -> &[f64] {
    let mut len = c.len();
    while len > 0 && c[len - 1] == 0.0 {
        len -= 1;
    }
    &c[..len]
}

/// Cauchy bound: every root has modulus below `1 + max |c_i / c_n|`.
fn root_bound(c: &[f64]) -> f64 {
    let lead = c[c.len() - 1].abs();
    1.0 + c[..c.len() - 1]
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs() / lead))
}

fn bisect(c: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = horner(c, lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = horner(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sorted real roots of `Σ c_i t^i` (coefficients in ascending order).
/// Roots of even multiplicity are found only when they are critical points
/// with an exact zero value; they never change the sign of the polynomial.
pub fn real_roots(coefficients: &[f64]) -> Vec<f64> {
    let c = trim(coefficients);
    if c.len() <= 1 || c.iter().any(|v| !v.is_finite()) {
        return Vec::new();
    }
    if c.len() == 2 {
        return vec![-c[0] / c[1]];
    }
    let bound = root_bound(c);
    let mut knots = vec![-bound];
    knots.extend(
        real_roots(&derivative(c))
            .into_iter()
            .filter(|r| r.abs() < bound),
    );
    knots.push(bound);
    let mut roots: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (flo, fhi) = (horner(c, lo), horner(c, hi));
        let r = if flo == 0.0 {
            Some(lo)
        } else if fhi == 0.0 {
            Some(hi)
        } else if (flo < 0.0) != (fhi < 0.0) {
            Some(bisect(c, lo, hi))
        } else {
            None
        };
        if let Some(r) = r {
            if roots.last().is_none_or(|&last| r > last) {
                roots.push(r);
            }
        }
    }
    roots
}
