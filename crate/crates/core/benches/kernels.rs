//! Parallel versus sequential throughput of the two hot kernels: one fused
//! training step (sample generation + backprop over a batch) and pilot
//! sampling of coupled level values.
//!
//! `cargo bench` compares the rayon pool against a one-thread pool and the
//! plain sequential loop; `cargo bench --no-default-features` builds every
//! kernel without rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mlmc_learn::nn::{init_weights, loss_and_grad_from, NetworkStructure};
use mlmc_learn::par;
use mlmc_learn::rng::{sample_uniform_box, seed_stream, stream_id, Phase};
use mlmc_learn::sde::{simulate_level_value, simulate_payoff_path, LevelSpec};
use mlmc_learn::{ParamVector, TrainingBox};

fn training_step(c: &mut Criterion) {
    let structure = NetworkStructure::new(5, vec![16, 16]).unwrap();
    let theta = init_weights(&structure, &mut seed_stream(1, 0));
    let bx = TrainingBox::reduced();
    let spec = LevelSpec::dyadic(6);
    let stream = seed_stream(1, stream_id(Phase::Train, 0, 6, 0));
    let step = || {
        loss_and_grad_from(&structure, &theta, 4096, |i, x| {
            let mut s = stream.for_sample(i as u64);
            let y = sample_uniform_box(&mut s, &bx)?;
            x.copy_from_slice(&bx.to_unit(&y));
            simulate_payoff_path(&y, &spec, &mut s)
        })
        .unwrap()
    };
    let mut g = c.benchmark_group("training_step");
    g.throughput(Throughput::Elements(4096));
    g.sample_size(20);
    g.bench_function("parallel", |b| b.iter(step));
    g.bench_function("one_thread", |b| b.iter(|| par::with_threads(Some(1), step)));
    g.finish();
}

fn level_samples(c: &mut Criterion) {
    let y = ParamVector::reference();
    let n = 1 << 14;
    let mut g = c.benchmark_group("level_samples");
    g.throughput(Throughput::Elements(n as u64));
    g.sample_size(20);
    for level in [2u32, 5] {
        let spec = LevelSpec::dyadic(level);
        let base = seed_stream(3, stream_id(Phase::Pilot, 0, level, 0));
        let sample = |i: usize| simulate_level_value(&y, &spec, &mut base.for_sample(i as u64)).unwrap();
        g.bench_with_input(BenchmarkId::new("parallel", level), &level, |b, _| {
            b.iter(|| par::map_range(n, sample).iter().sum::<f64>())
        });
        g.bench_with_input(BenchmarkId::new("sequential", level), &level, |b, _| {
            b.iter(|| par::seq::map_range(n, sample).iter().sum::<f64>())
        });
    }
    g.finish();
}

criterion_group!(benches, training_step, level_samples);
criterion_main!(benches);
