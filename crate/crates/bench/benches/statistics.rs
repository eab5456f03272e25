use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use manyiv_bench::{controls_draw, group_draw};
use manyiv_core::estimators::{beta3_zero_diag, jive2};
use manyiv_core::inference::{ar_loo, ar_w, compute_theta, invert_test, lm_loo, Engine};
use manyiv_core::{ProjectionBundle, TestId, VarianceId};

fn projections(c: &mut Criterion) {
    let mut g = c.benchmark_group("projection_bundle");
    for groups in [40, 100] {
        let (data, _) = group_draw(groups);
        g.bench_with_input(BenchmarkId::from_parameter(5 * groups), &data, |b, d| {
            b.iter(|| ProjectionBundle::from_instruments(d.z(), None).unwrap())
        });
    }
    g.finish();
}

fn tests(c: &mut Criterion) {
    let (data, bundle) = group_draw(40);
    c.bench_function("jive2_n200", |b| b.iter(|| jive2(&data, &bundle).unwrap()));
    for v in [VarianceId::Phi1, VarianceId::Phi2] {
        c.bench_function(&format!("ar_{}_n200", v.name()), |b| {
            b.iter(|| ar_loo(&data, &bundle, 0.1, v, 0.05).unwrap())
        });
    }
    c.bench_function("lm_psi2_n200", |b| {
        b.iter(|| lm_loo(&data, &bundle, 0.1, VarianceId::Psi2, 0.05).unwrap())
    });
    c.bench_function("ar_phi3_n200", |b| {
        b.iter(|| ar_loo(&data, &bundle, 0.1, VarianceId::Phi3, 0.05).unwrap())
    });
}

fn confidence_sets(c: &mut Criterion) {
    let (data, bundle) = group_draw(40);
    for (test, v) in [
        (TestId::Ar, VarianceId::Phi2),
        (TestId::Lm, VarianceId::Psi2),
    ] {
        c.bench_function(&format!("confset_{}_{}_n200", test.name(), v.name()), |b| {
            b.iter(|| {
                invert_test(
                    &data,
                    &bundle,
                    None,
                    test,
                    Some(v),
                    0.05,
                    Engine::Polynomial,
                    None,
                )
                .unwrap()
            })
        });
    }
}

fn controls(c: &mut Criterion) {
    let (data, bundle, a) = controls_draw(400);
    c.bench_function("compute_theta_n400", |b| {
        b.iter(|| compute_theta(&bundle).unwrap())
    });
    c.bench_function("beta3_n400", |b| {
        b.iter(|| beta3_zero_diag(&data, &bundle, &a).unwrap())
    });
    c.bench_function("arw_n400", |b| {
        b.iter(|| ar_w(&data, &bundle, &a, 0.6, 0.05).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = projections, tests, confidence_sets, controls
}
criterion_main!(benches);
