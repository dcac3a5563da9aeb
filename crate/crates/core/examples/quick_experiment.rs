//! Runs a small simulated experiment and prints per-cell accuracy.

use tastebud::elicitation::Strategy;
use tastebud::simulation::{run_experiment, ExperimentConfig};

fn main() {
    let users = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let config = ExperimentConfig {
        strategies: vec![Strategy::LE_EE, Strategy::LE_RS, Strategy::OP_EE, Strategy::OP_RS],
        iterations: vec![5, 15],
        users,
        seed: 1,
        ..ExperimentConfig::default()
    };
    let started = std::time::Instant::now();
    let report = run_experiment(&config).expect("experiment");
    for (cell, timing) in report.cells.iter().zip(&report.timing) {
        println!(
            "{:<12} acc {:.3}  H_1 {:.3}  H_T {:.3}  explored {:.0}  pair {:?} ms",
            cell.label(),
            cell.mean_accuracy,
            cell.mean_entropy[1],
            cell.mean_entropy.last().unwrap(),
            cell.mean_explored.last().unwrap(),
            timing.pair_median_ms
        );
    }
    println!("kernel {:?}  elapsed {:?}", report.kernel, started.elapsed());
}
