use criterion::{black_box, criterion_group, criterion_main, Criterion};

use sdo_bench::Fixture;
use sdo_core::warmstart::{FullObjective, SurrogateObjective};
use sdo_core::Objective;

fn simulator(c: &mut Criterion) {
    let f = Fixture::new().unwrap();
    let x0 = f.scenario.x0().clone();
    let dt = f.scenario.spec.dt;
    c.bench_function("simulator_step", |b| b.iter(|| f.model.step(black_box(&x0), 0.01, 0.9, dt).unwrap()));
    let u = vec![0.01; f.scenario.w.len()];
    c.bench_function("simulator_horizon", |b| {
        b.iter(|| f.model.simulate(black_box(&x0), &u, &f.scenario.w, dt).unwrap())
    });
}

fn surrogate(c: &mut Criterion) {
    let f = Fixture::new().unwrap();
    let context = f.scenario.context(f.net.context()).unwrap();
    let u = vec![0.01; f.scenario.w.len()];
    c.bench_function("surrogate_rollout", |b| {
        b.iter(|| f.net.rollout(black_box(&context), &u, &f.scenario.w).unwrap())
    });
}

fn gradients(c: &mut Criterion) {
    let f = Fixture::new().unwrap();
    let z = vec![0.1; f.scenario.w.len()];
    let full = FullObjective::new(&f.model, f.scenario.x0(), &f.scenario.w, &f.scenario.spec);
    let at = full.value(&z).unwrap();
    let mut g = c.benchmark_group("gradient");
    g.sample_size(20);
    g.bench_function("full_scale_finite_difference", |b| b.iter(|| full.gradient(black_box(&z), &at).unwrap()));
    let context = f.scenario.context(f.net.context()).unwrap();
    let sur = SurrogateObjective {
        dynamics: &f.net,
        cost: &f.cost,
        context: &context,
        w: &f.scenario.w,
        bx: full.bx,
    };
    let at = sur.value(&z).unwrap();
    g.bench_function("surrogate_adjoint", |b| b.iter(|| sur.gradient(black_box(&z), &at).unwrap()));
    g.finish();
}

criterion_group!(benches, simulator, surrogate, gradients);
criterion_main!(benches);
