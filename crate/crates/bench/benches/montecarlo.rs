use criterion::{criterion_group, criterion_main, Criterion};
use tbrfi_core::montecarlo::simulate_block_c;
use tbrfi_core::DriftScenario;

fn blocks(c: &mut Criterion) {
    let mut g = c.benchmark_group("montecarlo");
    g.sample_size(10);
    for (name, drift) in [("static", 0.0), ("drift_1rad", 1.0)] {
        let s = DriftScenario {
            total_phase_change: drift,
            trials: 200,
            seed: 7,
            ..DriftScenario::default()
        };
        g.bench_function(name, |b| b.iter(|| simulate_block_c(&s).unwrap().mean_c));
    }
    g.finish();
}

criterion_group!(benches, blocks);
criterion_main!(benches);
