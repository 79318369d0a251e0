//! Benchmark fixtures shared by the criterion benches.

use vitalsurv::simulate::{simulate_fixed_dataset, FixedSchedule};
use vitalsurv::{Dataset, ModelParams};

/// Reference-model dataset with a quarterly schedule over 12 time units.
pub fn reference_dataset(n: usize, seed: u64) -> Dataset {
    let sched = FixedSchedule::regular(12.0, 0.25).expect("valid schedule");
    simulate_fixed_dataset(n, &sched, &ModelParams::reference(), seed).expect("simulation succeeds")
}
