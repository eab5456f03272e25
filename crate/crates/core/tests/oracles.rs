mod common;

use common::{estimator_comparisons, leave_out_comparisons, small_instance};

const TOL: f64 = 1e-10;

fn report(failures: &[String], total: usize) {
    assert!(
        failures.is_empty(),
        "{} of {total} comparisons failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

#[test]
fn estimators_and_normalizers_without_controls() {
    let mut failures = Vec::new();
    let mut total = 0;
    for seed in 0..60 {
        for c in estimator_comparisons(&small_instance(seed, false)) {
            total += 1;
            if !c.ok(TOL) {
                failures.push(format!(
                    "seed {seed} {}: {} vs {}",
                    c.what, c.library, c.oracle
                ));
            }
        }
    }
    report(&failures, total);
}

#[test]
fn estimators_and_normalizers_with_controls() {
    let mut failures = Vec::new();
    let mut total = 0;
    for seed in 0..60 {
        for c in estimator_comparisons(&small_instance(1000 + seed, true)) {
            total += 1;
            if !c.ok(TOL) {
                failures.push(format!(
                    "seed {seed} {}: {} vs {}",
                    c.what, c.library, c.oracle
                ));
            }
        }
    }
    report(&failures, total);
}

#[test]
fn leave_out_downdates_match_refits() {
    let mut failures = Vec::new();
    let mut total = 0;
    for seed in 0..100 {
        for c in leave_out_comparisons(&small_instance(2000 + seed, false), seed) {
            total += 1;
            if !c.ok(TOL) {
                failures.push(format!(
                    "seed {seed} {}: {} vs {}",
                    c.what, c.library, c.oracle
                ));
            }
        }
    }
    report(&failures, total);
}
