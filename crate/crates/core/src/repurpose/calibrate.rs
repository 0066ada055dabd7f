use super::{repurpose_model_with, PipelineOptions};
use crate::assignment::RepurposeConfig;
use crate::error::{Error, Result};
use crate::model::SequentialModel;
use crate::partition::PartitionSpec;

const RELATIVE_TOLERANCE: f64 = 1e-3;
const MAX_STEPS: usize = 200;

/// Largest `eta2` (to relative tolerance 1e-3) whose restructured model keeps
/// every layer's squared deviation within `epsilon`.
pub fn calibrate_eta2(
    model: &SequentialModel,
    spec: &PartitionSpec,
    eta1: f64,
    epsilon: f64,
) -> Result<RepurposeConfig> {
    calibrate_eta2_with(model, spec, eta1, epsilon, PipelineOptions::default())
}

pub fn calibrate_eta2_with(
    model: &SequentialModel,
    spec: &PartitionSpec,
    eta1: f64,
    epsilon: f64,
    opts: PipelineOptions,
) -> Result<RepurposeConfig> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let feasible = |eta2: f64| -> Result<bool> {
        let cfg = RepurposeConfig::new(eta1, eta2)?;
        let rep = repurpose_model_with(model, spec, &cfg, opts)?;
        Ok(rep.per_layer_deviation.iter().all(|d| d * d <= epsilon))
    };

    let upper = model
        .dense_layers()?
        .iter()
        .map(|d| d.weight.max_abs().powi(2))
        .fold(0.0, f64::max);
    if feasible(upper)? {
        return RepurposeConfig::new(eta1, upper);
    }
    if !feasible(0.0)? {
        return Err(Error::Infeasible(format!(
            "eta1 = {eta1} alone already exceeds the per-layer budget {epsilon}"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, upper);
    for _ in 0..MAX_STEPS {
        if hi - lo <= RELATIVE_TOLERANCE * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    RepurposeConfig::new(eta1, lo)
}
