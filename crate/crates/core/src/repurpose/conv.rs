//! Channel-level reassignment for convolution kernels. Whole filters (all
//! spatial taps between one input and one output channel) are kept or dropped
//! together; spatial axes are never reordered.

use crate::assignment::{assign_from_costs, AssignmentResult, CostMatrix, RepurposeConfig};
use crate::error::{Error, Result};
use crate::model::ConvLayer;
use crate::partition::{owners, Permutation};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvRepurpose {
    /// Output-channel permutation.
    pub permutation: Permutation,
    pub layer: ConvLayer,
    /// Cost of each original output channel on its chosen worker.
    pub per_channel_cost: Vec<f64>,
    pub total_cost: f64,
}

/// Cost of placing output channel `out` on `worker`: every filter whose
/// energy is at most its threshold is dropped (paying its energy), every other
/// filter is kept (paying the threshold).
pub fn conv_channel_cost(
    layer: &ConvLayer,
    in_counts: &[usize],
    out: usize,
    worker: usize,
    cfg: &RepurposeConfig,
) -> f64 {
    owners(in_counts)
        .into_iter()
        .enumerate()
        .map(|(l, owner)| {
            let eta = cfg.threshold(owner != worker);
            let energy = layer.filter_energy(l, out);
            if energy > eta {
                eta
            } else {
                energy
            }
        })
        .sum()
}

pub fn repurpose_conv(
    layer: &ConvLayer,
    in_channel_counts: &[usize],
    out_channel_counts: &[usize],
    cfg: &RepurposeConfig,
) -> Result<ConvRepurpose> {
    let (c_in, c_out) = (layer.in_channels(), layer.out_channels());
    let workers = in_channel_counts.len();
    if in_channel_counts.iter().sum::<usize>() != c_in {
        return Err(Error::Partition(format!("input channel counts do not sum to {c_in}")));
    }
    if out_channel_counts.len() != workers || out_channel_counts.iter().sum::<usize>() != c_out {
        return Err(Error::Partition(format!(
            "output channel counts must list {workers} workers summing to {c_out}"
        )));
    }
    let mut values = vec![0.0; workers * c_out];
    for j in 0..workers {
        for i in 0..c_out {
            values[j * c_out + i] = conv_channel_cost(layer, in_channel_counts, i, j, cfg);
        }
    }
    let cost = CostMatrix::from_values(workers, c_out, values, out_channel_counts.to_vec())?;
    let AssignmentResult { permutation, worker_of, total_cost, per_neuron_cost } = assign_from_costs(&cost)?;

    let in_owner = owners(in_channel_counts);
    let spatial = layer.spatial_len();
    let src = layer.kernel.data();
    let mut data = vec![0.0; src.len()];
    for i in 0..c_out {
        let dst = permutation.apply_index(i);
        for l in 0..c_in {
            let eta = cfg.threshold(in_owner[l] != worker_of[i]);
            if layer.filter_energy(l, i) <= eta {
                continue;
            }
            for s in 0..spatial {
                data[layer.index(s, l, dst)] = src[layer.index(s, l, i)];
            }
        }
    }
    let kernel = Tensor::new(layer.kernel.shape().to_vec(), data)?;
    let bias = Tensor::vector(permutation.apply_slice(layer.bias.data()))?;
    Ok(ConvRepurpose {
        permutation,
        layer: ConvLayer::new(kernel, bias, layer.activation)?,
        per_channel_cost: per_neuron_cost,
        total_cost,
    })
}

/// Reorders input and output channels of a kernel (and the bias with the outputs).
pub fn permute_conv_channels(layer: &ConvLayer, input: &Permutation, output: &Permutation) -> Result<ConvLayer> {
    let (c_in, c_out) = (layer.in_channels(), layer.out_channels());
    if input.len() != c_in || output.len() != c_out {
        return Err(Error::Permutation(format!(
            "sizes {}/{} do not match {c_in}/{c_out} channels",
            input.len(),
            output.len()
        )));
    }
    let src = layer.kernel.data();
    let mut data = vec![0.0; src.len()];
    for s in 0..layer.spatial_len() {
        for l in 0..c_in {
            for k in 0..c_out {
                data[layer.index(s, input.apply_index(l), output.apply_index(k))] = src[layer.index(s, l, k)];
            }
        }
    }
    ConvLayer::new(
        Tensor::new(layer.kernel.shape().to_vec(), data)?,
        Tensor::vector(output.apply_slice(layer.bias.data()))?,
        layer.activation,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    /// 2x2 spatial kernel whose filter (l, k) is `norms[l][k] / 2` at every tap,
    /// so the filter's Frobenius norm is `norms[l][k]`.
    fn kernel_with_norms(norms: &[[f64; 2]; 2]) -> ConvLayer {
        let mut data = Vec::new();
        for _s in 0..4 {
            for row in norms {
                for &n in row {
                    data.push(n / 2.0);
                }
            }
        }
        ConvLayer::new(
            Tensor::new(vec![2, 2, 2, 2], data).unwrap(),
            Tensor::vector(vec![0.5, -0.5]).unwrap(),
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn two_channel_example() {
        let layer = kernel_with_norms(&[[3.0, 0.1], [0.1, 3.0]]);
        let cfg = RepurposeConfig::new(0.0, 1.0).unwrap();
        let r = repurpose_conv(&layer, &[1, 1], &[1, 1], &cfg).unwrap();
        assert!(r.permutation.is_identity());
        assert!((r.total_cost - 0.02).abs() < 1e-12);
        assert!((r.layer.filter_energy(0, 0) - 9.0).abs() < 1e-12);
        assert_eq!(r.layer.filter_energy(0, 1), 0.0);
        assert_eq!(r.layer.filter_energy(1, 0), 0.0);
    }

    #[test]
    fn crossed_filters_are_swapped() {
        let layer = kernel_with_norms(&[[0.1, 3.0], [3.0, 0.1]]);
        let cfg = RepurposeConfig::new(0.0, 1.0).unwrap();
        let r = repurpose_conv(&layer, &[1, 1], &[1, 1], &cfg).unwrap();
        assert_eq!(r.permutation.map(), &[1, 0]);
        assert_eq!(r.layer.bias.data(), &[-0.5, 0.5]);
        assert!((r.layer.filter_energy(0, 0) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_penalties_only_permute() {
        let layer = kernel_with_norms(&[[0.1, 3.0], [3.0, 0.1]]);
        let r = repurpose_conv(&layer, &[1, 1], &[1, 1], &RepurposeConfig::zero()).unwrap();
        let expected = permute_conv_channels(&layer, &Permutation::identity(2), &r.permutation).unwrap();
        assert_eq!(r.layer, expected);
        assert_eq!(r.total_cost, 0.0);
    }

    #[test]
    fn bad_counts() {
        let layer = kernel_with_norms(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(repurpose_conv(&layer, &[1], &[1, 1], &RepurposeConfig::zero()).is_err());
        assert!(repurpose_conv(&layer, &[1, 1], &[2, 1], &RepurposeConfig::zero()).is_err());
    }
}
