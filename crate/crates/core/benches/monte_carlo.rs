use std::hint::black_box;

use airkit::detector::{monte_carlo_rates_with, Execution, TargetFalseAlarm};
use airkit::signal::{NoisePower, SnrSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn rates(c: &mut Criterion) {
    let noise = NoisePower::from_dbm(-100.0).unwrap();
    let snr = SnrSpec::from_db(-6.0).unwrap();
    let pf = TargetFalseAlarm::new(0.5).unwrap();
    #[allow(unused_mut)]
    let mut modes = vec![("sequential", Execution::Sequential)];
    #[cfg(feature = "parallel")]
    modes.push(("parallel", Execution::Parallel));

    let mut group = c.benchmark_group("monte_carlo_rates");
    group.sample_size(10);
    for trials in [1_000u64, 20_000] {
        group.throughput(Throughput::Elements(2 * trials));
        for (name, exec) in &modes {
            group.bench_with_input(BenchmarkId::new(*name, trials), &trials, |b, &t| {
                b.iter(|| monte_carlo_rates_with(*exec, noise, snr, 50, pf, black_box(t), 7).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, rates);
criterion_main!(benches);
