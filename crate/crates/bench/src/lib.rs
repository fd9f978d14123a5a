//! Fixtures shared by the benchmarks.

use ddf_core::benchgen::{generate_system, BenchConfig};
use ddf_core::{Chain, System, TaskSet, TaskSpec};

/// The three-task example with an anomaly on chain `1 -> 2`.
pub fn anomaly_example() -> (TaskSet, Chain) {
    let set = TaskSet::new(vec![
        TaskSpec::new(0, 6000, 0, 500, 2500).with_priority(2),
        TaskSpec::new(1, 2000, 0, 500, 1000).with_priority(3),
        TaskSpec::new(2, 6000, 0, 500, 500).with_priority(1),
    ])
    .expect("valid")
    .with_sensors([1])
    .expect("valid");
    (set, Chain::new(vec![1, 2]).expect("valid"))
}

/// A generated automotive-style system of moderate size.
pub fn generated(util: f64, index: usize) -> System {
    let cfg = BenchConfig {
        periods: vec![1000, 2000, 5000, 10_000, 20_000],
        period_shares: vec![0.1, 0.1, 0.2, 0.3, 0.3],
        mean_exec_fraction: vec![0.03; 5],
        candidates: (200, 300),
        chains_per_set: (5, 10),
        ..BenchConfig::default()
    };
    generate_system(&cfg, util, index).expect("generation succeeds").system
}
