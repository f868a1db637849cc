// Same workloads under both execution modes. Without the `parallel`
// feature both rows run sequentially.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use opfenv::env::{DesignConfig, OpfEnv};
use opfenv::eval::scatter_diagnostic;
use opfenv::opf::{reference_optimum, OracleSettings};
use opfenv::par::Execution;
use opfenv::scenarios::{self, ScenarioKind};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scatter(c: &mut Criterion) {
    let env = OpfEnv::new(
        Arc::new(scenarios::bundled(ScenarioKind::VoltageControl)),
        DesignConfig::default(),
        1,
    )
    .unwrap();
    let mut group = c.benchmark_group("scatter_200_states");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| scatter_diagnostic(&env, 200, 1, mode).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let scenario = scenarios::bundled(ScenarioKind::VoltageControl);
    let settings = OracleSettings {
        starts: 8,
        min_step: 1e-4,
        ..OracleSettings::default()
    };
    let mut group = c.benchmark_group("oracle_multistart");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| reference_optimum(&scenario.problem, &scenario.problem.grid, &settings, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scatter, oracle);
criterion_main!(benches);
