use std::hint::black_box;
use std::sync::Arc;

use cdskill_bench::{demo_frames, sawing_setup, trained_skill, training_rows};
use cdskill_core::gmm::{em_fit, EmConfig};
use cdskill_core::sim::run_sawing;
use cdskill_core::spd::{decode, encode, DEFAULT_DELTA_MIN};
use cdskill_core::stiffness::endpoint_stiffness;
use cdskill_core::StiffnessParams;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DVector;

fn stiffness(c: &mut Criterion) {
    let frames = demo_frames(1000);
    let p = StiffnessParams::default();
    c.bench_function("endpoint_stiffness x1000", |b| {
        b.iter(|| {
            for f in &frames {
                black_box(endpoint_stiffness(black_box(f), &p).unwrap());
            }
        })
    });
    let ks: Vec<_> = frames.iter().map(|f| endpoint_stiffness(f, &p).unwrap()).collect();
    c.bench_function("spd encode+decode x1000", |b| {
        b.iter(|| {
            for k in &ks {
                let v = encode(black_box(k)).unwrap().0;
                black_box(decode(&v, DEFAULT_DELTA_MIN).unwrap());
            }
        })
    });
}

fn mixture(c: &mut Criterion) {
    let data: Vec<DVector<f64>> = training_rows(400)
        .iter()
        .map(|r| {
            let mut v = vec![r.y, r.z];
            v.extend_from_slice(&r.chol());
            DVector::from_vec(v)
        })
        .collect();
    let cfg = EmConfig { k: 3, seed: 7, ..EmConfig::default() };
    c.bench_function("em_fit 400x8 k=3", |b| b.iter(|| black_box(em_fit(black_box(&data), &cfg).unwrap())));

    let skill = trained_skill(400);
    let poses: Vec<[f64; 2]> = training_rows(100).iter().map(|r| [r.y, r.z]).collect();
    c.bench_function("skill reproduce x100", |b| {
        b.iter(|| {
            for p in &poses {
                black_box(skill.reproduce_unscaled(*p).unwrap());
            }
        })
    });
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("sawing 1 s");
    group.sample_size(20);
    let constant = sawing_setup(1.0, None);
    group.bench_function("constant", |b| b.iter(|| black_box(run_sawing(&constant).unwrap())));
    let learned = sawing_setup(1.0, Some(Arc::new(trained_skill(400))));
    group.bench_function("learned", |b| {
        b.iter_batched(|| learned.clone(), |s| black_box(run_sawing(&s).unwrap()), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, stiffness, mixture, simulation);
criterion_main!(benches);
