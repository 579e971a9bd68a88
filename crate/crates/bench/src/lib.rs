//! Benchmark fixtures shared by the Criterion benches in `benches/`.

pub use sparse_rks::model::InstanceSpec;
pub use sparse_rks::{LdsModel, SparseTrajectory, Vector};

/// Desk-scale instance (`K=10, s=3`, 20 dB) with the given dimensions.
pub fn instance(n: usize, m: usize, p: usize, seed: u64) -> (LdsModel, SparseTrajectory) {
    let spec = InstanceSpec { n, m, ..InstanceSpec::desk(p) };
    sparse_rks::model::generate_instance(&spec, seed).expect("desk-scale instance parameters are valid")
}
