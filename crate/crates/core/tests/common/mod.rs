//! Random instances and comparisons against the brute-force oracles.

#![allow(dead_code)]

pub mod oracle;

use manyiv_core::estimators;
use manyiv_core::inference::{check_balance, compute_theta};
use manyiv_core::linalg::leave_out;
use manyiv_core::montecarlo::GaussianStream;
use manyiv_core::ndarray::{concatenate, Array1, Array2, Axis};
use manyiv_core::variance;
use manyiv_core::{Dataset, ProjectionBundle};

pub struct Instance {
    pub y: Array1<f64>,
    pub x: Array1<f64>,
    pub z: Array2<f64>,
    pub w: Option<Array2<f64>>,
    pub beta0: f64,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::new(
            self.y.clone(),
            self.x.clone(),
            self.z.clone(),
            self.w.clone(),
        )
        .unwrap()
    }

    pub fn bundle(&self) -> ProjectionBundle {
        ProjectionBundle::from_instruments(self.z.view(), self.w.as_ref().map(|w| w.view()))
            .unwrap()
    }

    pub fn e0(&self) -> Array1<f64> {
        &self.y - &(&self.x * self.beta0)
    }
}

fn matrix(s: &mut GaussianStream, n: usize, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| s.normal())
}

/// Gaussian instance with `n` rows, `k_z` instruments and `k_w` controls
/// (the first an intercept); heteroskedastic errors and a first stage.
pub fn instance(seed: u64, n: usize, k_z: usize, k_w: usize) -> Instance {
    let mut s = GaussianStream::new(seed);
    let z = matrix(&mut s, n, k_z);
    let w = (k_w > 0).then(|| {
        let mut w = matrix(&mut s, n, k_w);
        w.column_mut(0).fill(1.0);
        w
    });
    let pi = Array1::from_shape_fn(k_z, |_| s.normal());
    let mut x = z.dot(&pi);
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let scale = 0.5 + s.uniform();
        let v = s.normal();
        let e = scale * (0.4 * v + s.normal());
        x[i] += v;
        y[i] = 0.8 * x[i] + e;
    }
    if let Some(w) = &w {
        let g = Array1::from_shape_fn(w.ncols(), |_| s.normal());
        y = y + w.dot(&g);
        let d = Array1::from_shape_fn(w.ncols(), |_| s.normal());
        x = &x + &(w.dot(&d) * 0.5);
        y = y + &(w.dot(&d) * 0.4);
    }
    Instance {
        y,
        x,
        z,
        w,
        beta0: 2.0 * s.uniform() - 0.5,
    }
}

/// Small instance, `N ≤ 20`, with or without controls.
pub fn small_instance(seed: u64, controls: bool) -> Instance {
    let mut s = GaussianStream::new(seed ^ 0x5eed);
    let k_z = 1 + s.below(3);
    let k_w = if controls { 1 + s.below(3) } else { 0 };
    let n = (k_z + k_w + 5 + s.below(12)).min(20);
    instance(seed, n, k_z, k_w)
}

pub struct Comparison {
    pub what: &'static str,
    pub library: f64,
    pub oracle: f64,
    pub floor: f64,
}

impl Comparison {
    pub fn ok(&self, tol: f64) -> bool {
        oracle::close(self.library, self.oracle, tol, self.floor)
    }
}

fn cmp(out: &mut Vec<Comparison>, what: &'static str, library: f64, oracle: f64, floor: f64) {
    out.push(Comparison {
        what,
        library,
        oracle,
        floor,
    });
}

fn mean_square(v: &Array1<f64>) -> f64 {
    v.dot(v) / v.len() as f64
}

/// Every estimator and normalizer against its oracle on one instance.
pub fn estimator_comparisons(inst: &Instance) -> Vec<Comparison> {
    let mut out = Vec::new();
    let data = inst.dataset();
    let bundle = inst.bundle();
    let (x, y) = (inst.x.view(), inst.y.view());
    let e = inst.e0();
    let ms = mean_square(&e);
    let var_floor = 1e-11 * ms * ms;
    match &inst.w {
        None => {
            let p = oracle::projection(&inst.z);
            let m = oracle::identity(inst.n()) - &p;
            let k = inst.z.ncols() as f64;
            cmp(
                &mut out,
                "tsls",
                estimators::tsls(&data, &bundle).unwrap().beta_hat,
                oracle::tsls(&p, x, y),
                0.0,
            );
            cmp(
                &mut out,
                "jive1",
                estimators::jive1(&data, &bundle).unwrap().beta_hat,
                oracle::jive1(&inst.z, x, y),
                0.0,
            );
            cmp(
                &mut out,
                "jive2",
                estimators::jive2(&data, &bundle).unwrap().beta_hat,
                oracle::jive2(&p, x, y),
                0.0,
            );
            let a = compute_theta(&bundle).unwrap();
            cmp(
                &mut out,
                "beta3 (no controls)",
                estimators::beta3_zero_diag(&data, &bundle, &a)
                    .unwrap()
                    .beta_hat,
                oracle::jive2(&p, x, y),
                0.0,
            );
            cmp(
                &mut out,
                "phi1",
                variance::phi1(e.view(), &bundle).unwrap().raw,
                oracle::phi1(&p, e.view(), k),
                var_floor,
            );
            cmp(
                &mut out,
                "phi2",
                variance::phi2(e.view(), &bundle).unwrap().raw,
                oracle::phi2(&p, &m, e.view(), k),
                var_floor,
            );
            cmp(
                &mut out,
                "phi3",
                variance::phi3_with_limit(e.view(), &bundle, None)
                    .unwrap()
                    .raw,
                oracle::phi3(&inst.z, e.view()),
                var_floor,
            );
            let psi_floor = 1e-11 * ms * mean_square(&inst.x);
            cmp(
                &mut out,
                "psi1",
                variance::psi1(e.view(), x, &bundle).unwrap().raw,
                oracle::psi1(&p, e.view(), x, k),
                psi_floor,
            );
            cmp(
                &mut out,
                "psi2",
                variance::psi2(e.view(), x, &bundle).unwrap().raw,
                oracle::psi2(&p, &m, e.view(), x, k),
                psi_floor,
            );
        }
        Some(w) => {
            let zw = concatenate(Axis(1), &[inst.z.view(), w.view()]).unwrap();
            let m_w = oracle::annihilator(w);
            let p_perp = oracle::projection(&m_w.dot(&inst.z));
            let m_zw = oracle::annihilator(&zw);
            let k = inst.z.ncols() as f64;
            cmp(
                &mut out,
                "tsls (controls)",
                estimators::tsls(&data, &bundle).unwrap().beta_hat,
                oracle::tsls(&p_perp, x, y),
                0.0,
            );
            cmp(
                &mut out,
                "beta1",
                estimators::beta1_ijive(&data, &bundle).unwrap().beta_hat,
                oracle::beta1(&p_perp, &m_w, x, y),
                0.0,
            );
            cmp(
                &mut out,
                "beta2",
                estimators::beta2_naive(&data, &bundle).unwrap().beta_hat,
                oracle::beta2(&p_perp, x, y),
                0.0,
            );
            if let (Ok(a), Some((_, a_oracle))) =
                (compute_theta(&bundle), oracle::zero_diag_a(&p_perp, &m_w))
            {
                let scale = a_oracle.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let worst = (a.matrix() - &a_oracle)
                    .iter()
                    .fold(0.0_f64, |m, v| m.max(v.abs()));
                cmp(
                    &mut out,
                    "A matrix (max abs error / max entry)",
                    worst / scale,
                    0.0,
                    1e-10,
                );
                cmp(
                    &mut out,
                    "beta3",
                    estimators::beta3_zero_diag(&data, &bundle, &a)
                        .unwrap()
                        .beta_hat,
                    oracle::beta3(&a_oracle, x, y),
                    0.0,
                );
                cmp(
                    &mut out,
                    "phi_w",
                    variance::phi_w(e.view(), &bundle, &a).unwrap().raw,
                    oracle::phi_w(&a_oracle, &m_zw, e.view(), k),
                    var_floor,
                );
            }
            cmp(
                &mut out,
                "phi2 (controls)",
                variance::phi2(e.view(), &bundle).unwrap().raw,
                oracle::phi2(&p_perp, &m_zw, e.view(), k),
                var_floor,
            );
        }
    }
    out
}

/// Leave-1/2/3-out projections, residuals and coefficients against refits.
pub fn leave_out_comparisons(inst: &Instance, seed: u64) -> Vec<Comparison> {
    assert!(inst.w.is_none());
    let mut out = Vec::new();
    let bundle = inst.bundle();
    let n = inst.n();
    let e = inst.e0();
    let me = (oracle::identity(n) - oracle::projection(&inst.z)).dot(&e);
    let mut s = GaussianStream::new(seed);
    for size in 1..=3 {
        let mut drop = Vec::new();
        while drop.len() < size {
            let i = s.below(n);
            if !drop.contains(&i) {
                drop.push(i);
            }
        }
        let lo = leave_out(&bundle, &drop).unwrap();
        let a = s.below(n);
        let b = s.below(n);
        cmp(
            &mut out,
            "leave-out projection",
            lo.projection(a, b),
            oracle::leave_out_projection(&inst.z, &drop, a, b),
            1e-13,
        );
        let j = s.below(n);
        cmp(
            &mut out,
            "leave-out residual",
            lo.residual(j, me.as_slice().unwrap()),
            oracle::leave_out_residual(&inst.z, e.view(), &drop, j),
            1e-13,
        );
        let coef = lo.coefficients(e.view());
        let refit = oracle::coefficients(&inst.z, e.view(), &oracle::keep_all_but(n, &drop));
        for (t, &col) in bundle.retained_instruments().iter().enumerate() {
            cmp(
                &mut out,
                "leave-out coefficient",
                coef[t],
                refit[col],
                1e-13,
            );
        }
    }
    out
}

/// Matrix facts of the zero-diagonal construction.
pub struct MatrixFacts {
    pub max_abs_diag: f64,
    pub max_abs_aw: f64,
    pub sum_sq: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A random design that satisfies the balance conditions, or `None`.
pub fn admissible_facts(seed: u64) -> Option<MatrixFacts> {
    let mut s = GaussianStream::new(seed ^ 0xadd);
    let k_z = 2 + s.below(6);
    let k_w = 1 + s.below(5);
    let n = 30 + s.below(50);
    let inst = instance(seed, n, k_z, k_w);
    let bundle = inst.bundle();
    let a = compute_theta(&bundle).ok()?;
    if !check_balance(&bundle, &a).pass {
        return None;
    }
    let m = a.matrix();
    let w = inst.w.as_ref().unwrap();
    let max_abs_diag = (0..n).map(|i| m[[i, i]].abs()).fold(0.0, f64::max);
    let max_abs_aw = m.dot(w).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let sum_sq = m.iter().map(|v| v * v).sum();
    let max_theta = a.theta().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kz = bundle.k_z() as f64;
    Some(MatrixFacts {
        max_abs_diag,
        max_abs_aw,
        sum_sq,
        lower: (1.0 - max_theta) * kz,
        upper: kz,
    })
}
