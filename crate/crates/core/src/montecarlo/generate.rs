use ndarray::{Array1, Array2, Axis};

use super::design::{DesignKind, Heteroskedasticity, SimDesign};
use super::rng::{mix64, GaussianStream};
use crate::data::Dataset;
use crate::error::{IvError, Result};
use crate::inference::{check_balance, compute_theta, BalanceReport, ZeroDiagA};
use crate::linalg::{off_diagonal_form, ProjectionBundle};
use crate::variance::leave_one_out_fit;

/// Stream index reserved for the fixed part of a design; redraw `a` uses
/// `DESIGN_STREAM - a`.
const DESIGN_STREAM: u64 = u64::MAX;
const MAX_REDRAWS: u64 = 20;

fn design_stream(seed: u64, attempt: u64) -> GaussianStream {
    GaussianStream::new(mix64(seed, DESIGN_STREAM - attempt))
}

fn rep_stream(seed: u64, rep: usize) -> GaussianStream {
    GaussianStream::new(mix64(seed, rep as u64))
}

/// Scales `signal` so that `signal' B signal / √K = strength` for the
/// diagonal-free weight `B`; returns the factor and the realized `μ²`.
fn calibrate(
    signal: &mut Array1<f64>,
    mu2_of: impl Fn(&Array1<f64>) -> f64,
    k: usize,
    strength: f64,
) -> Result<f64> {
    if strength == 0.0 {
        signal.fill(0.0);
        return Ok(0.0);
    }
    let raw = mu2_of(signal);
    if !(raw > 0.0) {
        return Err(IvError::Design(format!(
            "first stage has concentration {raw:e} before scaling; the strength target is infeasible"
        )));
    }
    let target = strength * (k as f64).sqrt();
    *signal *= (target / raw).sqrt();
    Ok(mu2_of(signal))
}

/// Fixed part of the balanced-group design. Replications redraw errors only.
#[derive(Debug, Clone)]
pub struct GroupDesign {
    design: SimDesign,
    z: Array2<f64>,
    bundle: ProjectionBundle,
    signal: Array1<f64>,
    omega: Array1<f64>,
    mu2: f64,
}

impl GroupDesign {
    pub fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        if design.kind != DesignKind::Groups {
            return Err(IvError::Design("not a group design".into()));
        }
        let (n, k) = (design.n, design.k_z);
        let size = n / k;
        let labels: Vec<usize> = (0..n).map(|i| i / size).collect();
        let bundle = ProjectionBundle::from_groups(&labels)?;
        let mut z = Array2::zeros((n, k));
        for (i, &g) in labels.iter().enumerate() {
            z[[i, g]] = 1.0;
        }
        let pi = design.first_stage.shape(k)?;
        let mut signal = Array1::from_iter(labels.iter().map(|&g| pi[g]));
        let mu2 = calibrate(
            &mut signal,
            |s| off_diagonal_form(bundle.p(), s.view(), s.view()),
            k,
            design.strength,
        )?;
        let omega = match design.heteroskedasticity {
            Heteroskedasticity::None => Array1::ones(n),
            Heteroskedasticity::AbsNormal => {
                let mut s = design_stream(design.seed, 0);
                Array1::from_iter((0..n).map(|_| s.normal().abs()))
            }
        };
        Ok(GroupDesign {
            design: design.clone(),
            z,
            bundle,
            signal,
            omega,
            mu2,
        })
    }

    pub fn design(&self) -> &SimDesign {
        &self.design
    }

    pub fn bundle(&self) -> &ProjectionBundle {
        &self.bundle
    }

    /// `π'Z_i` after calibration.
    pub fn signal(&self) -> &Array1<f64> {
        &self.signal
    }

    /// Realized diagonal-free concentration `μ²`.
    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    /// Structural and first-stage errors of replication `rep`.
    pub fn errors(&self, rep: usize) -> (Array1<f64>, Array1<f64>) {
        let mut s = rep_stream(self.design.seed, rep);
        let rho = self.design.rho;
        let tail = (1.0 - rho * rho).sqrt();
        let n = self.design.n;
        let mut e = Array1::zeros(n);
        let mut v = Array1::zeros(n);
        for i in 0..n {
            let a = s.normal();
            let b = s.normal();
            v[i] = a;
            e[i] = self.omega[i] * (rho * a + tail * b);
        }
        (e, v)
    }

    /// `(Y, X)` of replication `rep`.
    pub fn draw(&self, rep: usize) -> (Array1<f64>, Array1<f64>) {
        let (e, v) = self.errors(rep);
        let x = &self.signal + &v;
        let y = &x * self.design.beta + &e;
        (y, x)
    }

    pub fn dataset(&self, rep: usize) -> Result<Dataset> {
        let (y, x) = self.draw(rep);
        Dataset::new(y, x, self.z.clone(), None)
    }

    /// Variances of `e + Δv`, the implied errors at `β₀ = β − Δ` net of the
    /// signal.
    pub fn true_sigma2(&self, delta: f64) -> Array1<f64> {
        let rho = self.design.rho;
        self.omega
            .mapv(|w| w * w + 2.0 * delta * rho * w + delta * delta)
    }

    /// Covariances of `X_i` with `e_i + Δ v_i`.
    pub fn true_gamma(&self, delta: f64) -> Array1<f64> {
        self.omega.mapv(|w| self.design.rho * w + delta)
    }

    /// `Φ` at `β₀ = β − Δ`.
    pub fn true_phi(&self, delta: f64) -> f64 {
        crate::variance::true_phi(self.true_sigma2(delta).view(), &self.bundle)
    }

    /// `Ψ` at `β₀ = β − Δ` with the leave-one-out fit of a given `X`.
    pub fn true_psi(&self, delta: f64, x: &Array1<f64>) -> f64 {
        let fit = leave_one_out_fit(&self.bundle, x.view());
        crate::variance::true_psi(
            self.true_sigma2(delta).view(),
            self.true_gamma(delta).view(),
            fit.view(),
            &self.bundle,
        )
    }
}

/// Replication `rep` of the balanced-group design.
pub fn gen_group_design(design: &SimDesign, rep: usize) -> Result<Dataset> {
    GroupDesign::new(design)?.dataset(rep)
}

/// Fixed part of the many-controls design.
#[derive(Debug, Clone)]
pub struct ControlsDesign {
    design: SimDesign,
    z: Array2<f64>,
    w: Array2<f64>,
    bundle: ProjectionBundle,
    a: ZeroDiagA,
    report: BalanceReport,
    signal: Array1<f64>,
    control_part: Array1<f64>,
    omega: Array1<f64>,
    mu2: f64,
    redraws: u64,
}

fn controls_matrix(d: &SimDesign, s: &mut GaussianStream) -> Array2<f64> {
    let n = d.n;
    let mut w = Array2::zeros((n, d.k_w));
    w.column_mut(0).fill(1.0);
    let mut col = 1;
    for &levels in &d.categorical_levels {
        for i in 0..n {
            let level = s.below(levels);
            if level > 0 {
                w[[i, col + level - 1]] = 1.0;
            }
        }
        col += levels - 1;
    }
    for c in col..d.k_w {
        for i in 0..n {
            w[[i, c]] = s.normal();
        }
    }
    w
}

impl ControlsDesign {
    pub fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        if design.kind != DesignKind::Controls {
            return Err(IvError::Design("not a many-controls design".into()));
        }
        let (n, k_z, k_w) = (design.n, design.k_z, design.k_w);
        let mut last_failure = String::new();
        for attempt in 0..MAX_REDRAWS {
            let mut s = design_stream(design.seed, attempt);
            let w = controls_matrix(design, &mut s);
            let z = Array2::from_shape_fn((n, k_z), |_| s.normal());
            let bundle = ProjectionBundle::from_instruments(z.view(), Some(w.view()))?;
            if bundle.k_z() != k_z || bundle.k_w() != k_w {
                last_failure = format!(
                    "rank {} instruments / {} controls",
                    bundle.k_z(),
                    bundle.k_w()
                );
                continue;
            }
            let a = compute_theta(&bundle)?;
            let report = check_balance(&bundle, &a);
            if !report.pass {
                last_failure = report.violations().join("; ");
                continue;
            }
            let pi = design.first_stage.shape(k_z)?;
            let z_perp = {
                let mut zp = z.clone();
                for (c, mut col) in zp.axis_iter_mut(Axis(1)).enumerate() {
                    col.assign(&bundle.residualize_controls(z.column(c)));
                }
                zp
            };
            let mut signal = z_perp.dot(&Array1::from(pi));
            let mu2 = calibrate(
                &mut signal,
                |sig| a.matrix().dot(sig).dot(sig),
                k_z,
                design.strength,
            )?;
            let gamma = Array1::from_iter((0..k_w).map(|_| s.normal()));
            let control_part = w.dot(&gamma);
            let omega = match design.heteroskedasticity {
                Heteroskedasticity::None => Array1::ones(n),
                Heteroskedasticity::AbsNormal => {
                    Array1::from_iter((0..n).map(|_| s.normal().abs()))
                }
            };
            return Ok(ControlsDesign {
                design: design.clone(),
                z,
                w,
                bundle,
                a,
                report,
                signal,
                control_part,
                omega,
                mu2,
                redraws: attempt,
            });
        }
        Err(IvError::Design(format!(
            "no admissible draw in {MAX_REDRAWS} attempts (last: {last_failure})"
        )))
    }

    pub fn design(&self) -> &SimDesign {
        &self.design
    }

    pub fn bundle(&self) -> &ProjectionBundle {
        &self.bundle
    }

    pub fn zero_diag(&self) -> &ZeroDiagA {
        &self.a
    }

    pub fn assumption_report(&self) -> &BalanceReport {
        &self.report
    }

    /// Number of rejected fixed-part draws before an admissible one.
    pub fn redraws(&self) -> u64 {
        self.redraws
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    pub fn signal(&self) -> &Array1<f64> {
        &self.signal
    }

    /// Structural and first-stage errors of replication `rep`.
    pub fn errors(&self, rep: usize) -> (Array1<f64>, Array1<f64>) {
        let mut s = rep_stream(self.design.seed, rep);
        let n = self.design.n;
        let loading = self.design.error_loading;
        let mut e = Array1::zeros(n);
        let mut v = Array1::zeros(n);
        for i in 0..n {
            let eps = s.normal();
            let vi = s.normal();
            v[i] = vi;
            e[i] = self.omega[i] * (eps + loading * vi);
        }
        (e, v)
    }

    pub fn draw(&self, rep: usize) -> (Array1<f64>, Array1<f64>) {
        let (e, v) = self.errors(rep);
        let x = &self.signal + &v;
        let y = &self.control_part + &(&x * self.design.beta) + &e;
        (y, x)
    }

    pub fn dataset(&self, rep: usize) -> Result<Dataset> {
        let (y, x) = self.draw(rep);
        Dataset::new(y, x, self.z.clone(), Some(self.w.clone()))
    }

    /// Variances of the structural errors.
    pub fn true_sigma2(&self) -> Array1<f64> {
        let l = self.design.error_loading;
        self.omega.mapv(|w| w * w * (1.0 + l * l))
    }
}

/// Replication `rep` of the many-controls design.
pub fn gen_controls_design(design: &SimDesign, rep: usize) -> Result<Dataset> {
    ControlsDesign::new(design)?.dataset(rep)
}
