use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use gradflow_bench::Fixture;
use gradflow_core::autodiff::grad_wrt_params;
use gradflow_core::loss::batched::{dual_ratio, primal, DualContext};
use gradflow_core::loss::{be_loss, dual_argument_values, TapeDual};
use gradflow_core::network::batch::evaluate;
use gradflow_core::optimizer::{lr_schedule, AdamState, Phase};

fn forward(c: &mut Criterion) {
    let f = Fixture::new(2, 10_000, 400, 60, 30);
    c.bench_function("forward_with_tangents_d2_n1e4", |b| {
        b.iter(|| evaluate(black_box(&f.u), f.samples.interior(), true, f.batch))
    });
}

fn primal_gradient(c: &mut Criterion) {
    let f = Fixture::new(2, 10_000, 400, 60, 30);
    let frozen = DualContext::frozen(&f.v, 1.0, &f.samples, &f.spec, f.batch).unwrap();
    let constant = DualContext::ConstantScalar { p_h: 1.0 };
    c.bench_function("primal_gradient_frozen_v", |b| {
        b.iter(|| primal(&f.u, &f.step, &frozen, &f.samples, &f.spec, f.batch).unwrap())
    });
    c.bench_function("primal_gradient_constant", |b| {
        b.iter(|| primal(&f.u, &f.step, &constant, &f.samples, &f.spec, f.batch).unwrap())
    });
}

fn dual_epoch(c: &mut Criterion) {
    let f = Fixture::new(2, 10_000, 400, 60, 30);
    let w = evaluate(&f.u, f.samples.interior(), false, f.batch).values;
    let arg = dual_argument_values(&w, &f.step, &f.spec).unwrap();
    c.bench_function("dual_adam_epoch", |b| {
        b.iter_batched(
            || (f.v.clone(), AdamState::new(f.v.as_slice().len())),
            |(mut v, mut adam)| {
                let (_, mut g) = dual_ratio(&v, &arg, &f.samples, &f.spec, f.batch).unwrap();
                g.values.iter_mut().for_each(|x| *x = -*x);
                adam.step(&mut v, &g, lr_schedule(Phase::DualMax, 1)).unwrap();
                v
            },
            BatchSize::SmallInput,
        )
    });
}

fn tape_gradient(c: &mut Criterion) {
    let f = Fixture::new(2, 200, 40, 60, 30);
    c.bench_function("tape_be_loss_frozen_v_n200", |b| {
        b.iter(|| {
            grad_wrt_params(&f.u, |tape, w| {
                Ok(be_loss(tape, w, &f.step, TapeDual::FrozenV(&f.v), &f.samples, &f.spec)?.total)
            })
            .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward, primal_gradient, dual_epoch, tape_gradient
}
criterion_main!(benches);
