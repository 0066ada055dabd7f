//! Seeded fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repurpose_core::synth::{random_batch, random_model};
use repurpose_core::{Activation, PartitionSpec, SequentialModel, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Square `(n, n)` weight matrix with entries in `[-1, 1)`.
pub fn square_weight(seed: u64, n: usize) -> Tensor {
    random_batch(&mut rng(seed), n, n, 1.0)
}

/// `depth` dense ReLU layers of width `n` with a balanced split over `workers`.
pub fn layered(seed: u64, n: usize, depth: usize, workers: usize) -> (SequentialModel, PartitionSpec) {
    let widths = vec![n; depth + 1];
    let model = random_model(&mut rng(seed), &widths, Activation::Relu, 1.0);
    (model, PartitionSpec::balanced(workers, &widths).expect("workers <= n"))
}
