//! Seeded synthetic models: dense random stacks and planted block-diagonal
//! models whose neurons have been scrambled.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{Activation, DenseLayer, SequentialModel};
use crate::partition::{apply_permutation, owners, PartitionSpec, Permutation};
use crate::tensor::Tensor;

/// Dense stack with weights uniform in `[-scale, scale]` and biases in `[-0.1, 0.1]`.
pub fn random_model(rng: &mut impl Rng, widths: &[usize], activation: Activation, scale: f64) -> SequentialModel {
    let layers = widths
        .windows(2)
        .map(|w| {
            let weight = Tensor::from_fn(w[0], w[1], |_, _| rng.gen_range(-scale..=scale));
            let bias = Tensor::vector((0..w[1]).map(|_| rng.gen_range(-0.1..=0.1)).collect()).unwrap();
            DenseLayer::new(weight, bias, activation).unwrap()
        })
        .collect();
    SequentialModel::dense(layers).unwrap()
}

pub fn random_batch(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-scale..=scale))
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Permutation {
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng);
    Permutation::new(map).unwrap()
}

/// A block-diagonal model scrambled by hidden permutations.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    /// The model before scrambling; every layer is block diagonal under `spec`.
    pub clean: SequentialModel,
    pub scrambled: SequentialModel,
    pub spec: PartitionSpec,
    /// Scrambling permutation per boundary (entry 0, the input, is the identity).
    pub scrambles: Vec<Permutation>,
}

/// Builds a planted model. Every in-block weight has magnitude in `[0.5, 1.5]`,
/// so no in-block entry is zero and every cross entry is exactly zero.
pub fn planted_model(rng: &mut impl Rng, workers: usize, widths: &[usize], activation: Activation) -> PlantedModel {
    let spec = PartitionSpec::balanced(workers, widths).unwrap();
    let layers: Vec<DenseLayer> = widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let (ro, co) = (owners(&spec.counts[l]), owners(&spec.counts[l + 1]));
            let weight = Tensor::from_fn(w[0], w[1], |r, c| {
                if ro[r] == co[c] {
                    let mag = rng.gen_range(0.5..=1.5);
                    if rng.gen_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                } else {
                    0.0
                }
            });
            let bias = Tensor::vector((0..w[1]).map(|_| rng.gen_range(-0.1..=0.1)).collect()).unwrap();
            DenseLayer::new(weight, bias, activation).unwrap()
        })
        .collect();
    let clean = SequentialModel::dense(layers).unwrap();

    let mut scrambles = vec![Permutation::identity(widths[0])];
    scrambles.extend(widths[1..].iter().map(|&n| random_permutation(rng, n)));
    let scrambled = SequentialModel::dense(
        clean
            .dense_layers()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(l, d)| apply_permutation(d, &scrambles[l], &scrambles[l + 1]).unwrap())
            .collect(),
    )
    .unwrap();
    PlantedModel { clean, scrambled, spec, scrambles }
}
