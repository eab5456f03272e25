use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{IvError, Result};
use crate::linalg::ProjectionBundle;

/// Outcome, endogenous regressor, instruments and (optional) exogenous controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Array1<f64>,
    x: Array1<f64>,
    z: Array2<f64>,
    w: Array2<f64>,
    /// Number of control columns partialled out before this dataset was formed.
    partialled_out: usize,
}

impl Dataset {
    /// Validates shapes and finiteness. `w = None` means no controls.
    pub fn new(
        y: Array1<f64>,
        x: Array1<f64>,
        z: Array2<f64>,
        w: Option<Array2<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        let w = w.unwrap_or_else(|| Array2::zeros((n, 0)));
        if x.len() != n || z.nrows() != n || w.nrows() != n {
            return Err(IvError::Dimension(format!(
                "y has {} rows, x {}, Z {}, W {}",
                n,
                x.len(),
                z.nrows(),
                w.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(IvError::Dimension(
                "instrument matrix has no columns".into(),
            ));
        }
        let k = z.ncols() + w.ncols();
        if n <= k {
            return Err(IvError::TooFewObservations { n, k });
        }
        check_finite(y.view(), "y")?;
        check_finite(x.view(), "x")?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(IvError::NonFinite { what: "Z" });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(IvError::NonFinite { what: "W" });
        }
        Ok(Self {
            y,
            x,
            z,
            w,
            partialled_out: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Raw instrument count (before collinearity pruning).
    pub fn k_z(&self) -> usize {
        self.z.ncols()
    }

    /// Raw control count (before collinearity pruning).
    pub fn k_w(&self) -> usize {
        self.w.ncols()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn x(&self) -> ArrayView1<'_, f64> {
        self.x.view()
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn w(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn has_controls(&self) -> bool {
        self.w.ncols() > 0
    }

    /// Count of controls removed by [`Dataset::partial_out_controls`]; zero for raw data.
    pub fn partialled_out(&self) -> usize {
        self.partialled_out
    }

    /// Implied structural errors `Y - beta0 X`.
    pub fn implied_errors(&self, beta0: f64) -> Array1<f64> {
        &self.y - &(&self.x * beta0)
    }

    /// Same regressors with a different outcome vector.
    pub fn with_outcome(&self, y: Array1<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(IvError::Dimension(
                "replacement outcome has wrong length".into(),
            ));
        }
        check_finite(y.view(), "y")?;
        Ok(Self { y, ..self.clone() })
    }

    /// Replaces `y`, `x` and `Z` by their `M_W`-residuals and drops the controls.
    ///
    /// The result carries a marker so downstream estimators can flag that the
    /// diagonal-removal step was applied after partialling out.
    pub fn partial_out_controls(&self, bundle: &ProjectionBundle) -> Result<Self> {
        if !self.has_controls() {
            return Ok(self.clone());
        }
        let m_w = bundle
            .m_w()
            .ok_or_else(|| IvError::Dimension("bundle was built without controls".into()))?;
        if m_w.nrows() != self.n() {
            return Err(IvError::Dimension("bundle does not match dataset".into()));
        }
        Ok(Self {
            y: m_w.dot(&self.y),
            x: m_w.dot(&self.x),
            z: m_w.dot(&self.z),
            w: Array2::zeros((self.n(), 0)),
            partialled_out: bundle.k_w(),
        })
    }
}

fn check_finite(v: ArrayView1<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(IvError::NonFinite { what })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_too_few_rows() {
        let err = Dataset::new(
            array![1.0, 2.0],
            array![1.0, 2.0],
            array![[1.0, 0.0], [0.0, 1.0]],
            None,
        )
        .unwrap_err();
        assert_eq!(err, IvError::TooFewObservations { n: 2, k: 2 });
    }

    #[test]
    fn rejects_nan() {
        let err = Dataset::new(
            array![1.0, f64::NAN, 0.0],
            array![1.0, 2.0, 3.0],
            array![[1.0], [1.0], [1.0]],
            None,
        )
        .unwrap_err();
        assert_eq!(err, IvError::NonFinite { what: "y" });
    }

    #[test]
    fn implied_errors() {
        let d = Dataset::new(
            array![2.0, 4.0],
            array![1.0, 2.0],
            array![[1.0], [1.0]],
            None,
        )
        .unwrap();
        assert_eq!(d.implied_errors(2.0), array![0.0, 0.0]);
        assert_eq!(d.k_w(), 0);
    }
}
