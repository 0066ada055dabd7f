//! Layer-by-layer restructuring of a dense model.
//!
//! Layer `l` first inherits the output permutation of layer `l - 1` on its
//! rows, then its own outputs are assigned to workers, and finally every
//! weight whose square does not exceed `eta1` (inside a worker block) or
//! `eta1 + eta2` (across blocks) is set to zero. Biases follow their neurons.

mod calibrate;
mod certificate;
mod conv;

pub use calibrate::{calibrate_eta2, calibrate_eta2_with};
pub use certificate::{certificate_bound, error_certificate, propagation_errors, ErrorCertificate};
pub use conv::{permute_conv_channels, repurpose_conv, ConvRepurpose};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::{assign_neurons, build_cost_matrix, AssignmentResult, RepurposeConfig};
use crate::error::{Error, Result};
use crate::model::{DenseLayer, SequentialModel};
use crate::partition::{build_mask, cross_edge_count, permute_matrix, MaskMatrix, PartitionSpec, Permutation};
use crate::tensor::Tensor;

pub const REPORT_FILE: &str = "repurpose.json";

/// A restructured model together with the permutations that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RepurposedModel {
    pub model: SequentialModel,
    /// `permutations[l]` reorders boundary `l`; entry 0 is the identity.
    pub permutations: Vec<Permutation>,
    /// `||W_hat - Pi_prev W Pi^T||_F` per layer.
    pub per_layer_deviation: Vec<f64>,
    /// Cross edges of the original weights under the index-order split.
    pub cross_edges_before: Vec<usize>,
    pub cross_edges_after: Vec<usize>,
    /// Minimized per-layer objective (reconstruction + penalties).
    pub layer_objective: Vec<f64>,
    pub config: RepurposeConfig,
}

impl RepurposedModel {
    pub fn output_permutation(&self) -> &Permutation {
        self.permutations.last().expect("at least the input permutation")
    }

    /// Largest per-layer deviation, the `epsilon` of the output bound.
    pub fn max_deviation(&self) -> f64 {
        self.per_layer_deviation.iter().copied().fold(0.0, f64::max)
    }

    /// Pruned positions (weights forced to zero) per layer, as `(row, col)`.
    pub fn zero_mask(&self) -> Vec<Vec<(usize, usize)>> {
        self.model
            .dense_layers()
            .expect("repurposed models are dense")
            .iter()
            .map(|d| {
                let w = &d.weight;
                (0..w.rows())
                    .flat_map(|r| (0..w.cols()).map(move |c| (r, c)))
                    .filter(|&(r, c)| w.get(r, c) == 0.0)
                    .collect()
            })
            .collect()
    }

    pub fn report(&self, certificate: Option<&ErrorCertificate>) -> RepurposeReport {
        RepurposeReport {
            permutations: self.permutations.iter().map(|p| p.map().to_vec()).collect(),
            per_layer_deviation: self.per_layer_deviation.clone(),
            cross_edges_before: self.cross_edges_before.clone(),
            cross_edges_after: self.cross_edges_after.clone(),
            eta1: self.config.eta1,
            eta2: self.config.eta2,
            certificate: certificate.map(CertificateSummary::from),
        }
    }

    /// Writes the model directory plus `repurpose.json`.
    pub fn save(&self, dir: impl AsRef<Path>, certificate: Option<&ErrorCertificate>) -> Result<()> {
        let dir = dir.as_ref();
        crate::io::save_model(&self.model, dir)?;
        crate::io::write_json(&dir.join(REPORT_FILE), &self.report(certificate))
    }
}

/// On-disk companion of a restructured model directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepurposeReport {
    pub permutations: Vec<Vec<usize>>,
    pub per_layer_deviation: Vec<f64>,
    pub cross_edges_before: Vec<usize>,
    pub cross_edges_after: Vec<usize>,
    pub eta1: f64,
    pub eta2: f64,
    pub certificate: Option<CertificateSummary>,
}

impl RepurposeReport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub tau: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub epsilon: f64,
    pub bound: f64,
}

impl From<&ErrorCertificate> for CertificateSummary {
    fn from(c: &ErrorCertificate) -> Self {
        Self { tau: c.tau, b: c.b, epsilon: c.epsilon, bound: c.bound }
    }
}

/// `E = eta1 + eta2 * M` for the given block split.
pub fn threshold_matrix(mask: &MaskMatrix, cfg: &RepurposeConfig) -> Tensor {
    Tensor::from_fn(mask.rows(), mask.cols(), |r, c| cfg.threshold(mask.get(r, c)))
}

/// Zeroes `t[i][j]` when `t[i][j]^2 <= e[i][j]`; survivors are copied unchanged.
pub fn hard_threshold_matrix(t: &Tensor, e: &Tensor) -> Result<Tensor> {
    if t.shape() != e.shape() {
        return Err(Error::Shape(format!("tensor {:?} vs thresholds {:?}", t.shape(), e.shape())));
    }
    if e.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Config("negative threshold".into()));
    }
    let data = t
        .data()
        .iter()
        .zip(e.data())
        .map(|(&v, &thr)| if crate::assignment::survives(v, thr) { v } else { 0.0 })
        .collect();
    Tensor::new(t.shape().to_vec(), data)
}

/// Options shared by the restructuring pipeline and its baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Keep the final layer's neurons in their original order.
    pub pin_output: bool,
}

/// Permutes, reassigns and prunes every layer of a dense model.
pub fn repurpose_model(
    model: &SequentialModel,
    spec: &PartitionSpec,
    cfg: &RepurposeConfig,
) -> Result<RepurposedModel> {
    repurpose_model_with(model, spec, cfg, PipelineOptions::default())
}

pub fn repurpose_model_with(
    model: &SequentialModel,
    spec: &PartitionSpec,
    cfg: &RepurposeConfig,
    opts: PipelineOptions,
) -> Result<RepurposedModel> {
    run_pipeline(model, spec, cfg, |l, last, t| {
        if opts.pin_output && last {
            Ok(None)
        } else {
            assign_neurons(t, &spec.counts[l], &spec.counts[l + 1], cfg).map(Some)
        }
    })
}

/// Baseline: hard-thresholds cross weights without moving any neuron.
pub fn direct_sparsify(
    model: &SequentialModel,
    spec: &PartitionSpec,
    cfg: &RepurposeConfig,
) -> Result<RepurposedModel> {
    run_pipeline(model, spec, cfg, |_, _, _| Ok(None))
}

fn run_pipeline(
    model: &SequentialModel,
    spec: &PartitionSpec,
    cfg: &RepurposeConfig,
    mut assign: impl FnMut(usize, bool, &Tensor) -> Result<Option<AssignmentResult>>,
) -> Result<RepurposedModel> {
    let dense = model.dense_layers()?;
    spec.validate(model)?;
    let depth = dense.len();

    let mut permutations = vec![Permutation::identity(dense[0].in_dim())];
    let mut layers = Vec::with_capacity(depth);
    let mut deviation = Vec::with_capacity(depth);
    let mut before = Vec::with_capacity(depth);
    let mut after = Vec::with_capacity(depth);
    let mut objective = Vec::with_capacity(depth);

    for (l, layer) in dense.iter().enumerate() {
        let prev = permutations.last().unwrap().clone();
        let (in_counts, out_counts) = (&spec.counts[l], &spec.counts[l + 1]);
        let mask = build_mask(in_counts, out_counts)?;
        let rows_permuted = permute_matrix(&layer.weight, &prev, &Permutation::identity(layer.out_dim()));

        let assignment = match assign(l, l + 1 == depth, &rows_permuted)? {
            Some(a) => a,
            None => {
                // Identity placement: neuron i stays at position i.
                let cost = build_cost_matrix(&rows_permuted, in_counts, cfg)?.with_expansion(out_counts)?;
                AssignmentResult::from_workers(&cost, crate::partition::owners(out_counts))?
            }
        };
        let perm = assignment.permutation;
        let target = permute_matrix(&layer.weight, &prev, &perm);
        let pruned = hard_threshold_matrix(&target, &threshold_matrix(&mask, cfg))?;

        let dev_sq: f64 = pruned.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum();
        deviation.push(dev_sq.sqrt());
        before.push(cross_edge_count(&layer.weight, &mask)?);
        after.push(cross_edge_count(&pruned, &mask)?);
        objective.push(assignment.total_cost);

        let bias = Tensor::vector(perm.apply_slice(layer.bias.data()))?;
        layers.push(DenseLayer::new(pruned, bias, layer.activation)?);
        permutations.push(perm);
    }

    Ok(RepurposedModel {
        model: SequentialModel::dense(layers)?,
        permutations,
        per_layer_deviation: deviation,
        cross_edges_before: before,
        cross_edges_after: after,
        layer_objective: objective,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, ConvLayer, Layer};

    #[test]
    fn hard_threshold_examples() {
        let t = Tensor::from_rows(&[vec![0.5, 2.0]]).unwrap();
        let e = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(hard_threshold_matrix(&t, &e).unwrap().data(), &[0.0, 2.0]);
        let t = Tensor::from_rows(&[vec![0.5, -2.0, 1e-300]]).unwrap();
        assert_eq!(hard_threshold_matrix(&t, &Tensor::zeros(vec![1, 3])).unwrap(), t);
        assert!(hard_threshold_matrix(&t, &Tensor::zeros(vec![3, 1])).is_err());
    }

    #[test]
    fn conv_layer_is_rejected() {
        let conv = ConvLayer::new(
            Tensor::zeros(vec![1, 2, 2]),
            Tensor::zeros(vec![2]),
            Activation::Relu,
        )
        .unwrap();
        let model = SequentialModel::new(vec![Layer::Conv(conv)]).unwrap();
        let spec = PartitionSpec::balanced(2, &[2, 2]).unwrap();
        assert!(matches!(
            repurpose_model(&model, &spec, &RepurposeConfig::zero()),
            Err(Error::UnsupportedLayer { layer: 0 })
        ));
    }

    #[test]
    fn zero_penalties_leave_direct_sparsify_unchanged() {
        let w = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.25]]).unwrap();
        let layer = DenseLayer::new(w, Tensor::vector(vec![0.1, 0.2]).unwrap(), Activation::Tanh).unwrap();
        let model = SequentialModel::dense(vec![layer]).unwrap();
        let spec = PartitionSpec::balanced(2, &[2, 2]).unwrap();
        let out = direct_sparsify(&model, &spec, &RepurposeConfig::zero()).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.per_layer_deviation, vec![0.0]);
    }

    #[test]
    fn pinned_output_keeps_order() {
        let w = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let layer = DenseLayer::new(w, Tensor::vector(vec![0.0, 0.0]).unwrap(), Activation::Relu).unwrap();
        let model = SequentialModel::dense(vec![layer]).unwrap();
        let spec = PartitionSpec::balanced(2, &[2, 2]).unwrap();
        let cfg = RepurposeConfig::new(0.0, 1.0).unwrap();
        let free = repurpose_model(&model, &spec, &cfg).unwrap();
        assert_eq!(free.output_permutation().map(), &[1, 0]);
        assert_eq!(free.cross_edges_after, vec![0]);
        let pinned = repurpose_model_with(&model, &spec, &cfg, PipelineOptions { pin_output: true }).unwrap();
        assert!(pinned.output_permutation().is_identity());
        assert_eq!(pinned.per_layer_deviation, vec![2f64.sqrt()]);
    }

    #[test]
    fn report_round_trips_through_json() {
        let w = Tensor::from_rows(&[vec![1.0, 0.01], vec![0.02, 1.0]]).unwrap();
        let layer = DenseLayer::new(w, Tensor::vector(vec![0.0, 0.0]).unwrap(), Activation::Relu).unwrap();
        let model = SequentialModel::dense(vec![layer]).unwrap();
        let spec = PartitionSpec::balanced(2, &[2, 2]).unwrap();
        let rep = repurpose_model(&model, &spec, &RepurposeConfig::new(0.0, 0.1).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        rep.save(dir.path(), None).unwrap();
        let report = RepurposeReport::load(dir.path().join(REPORT_FILE)).unwrap();
        assert_eq!(report, rep.report(None));
        assert_eq!(report.cross_edges_before, vec![2]);
        assert_eq!(report.cross_edges_after, vec![0]);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        for key in ["permutations", "per_layer_deviation", "cross_edges_before", "cross_edges_after", "eta1", "eta2", "certificate"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
