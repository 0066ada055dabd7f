//! Output-error certificate for a restructured model.
//!
//! With 1-Lipschitz activations, `||W_l||_F <= tau`, per-layer deviation at
//! most `eps`, and hidden signals bounded by `B`, the gap after layer `l`
//! obeys `e_l <= (tau + eps) e_{l-1} + eps B`, so the output gap is at most
//! `eps B (1 + r + .. + r^(L-1))` with `r = tau + eps`.

use serde::{Deserialize, Serialize};

use super::RepurposedModel;
use crate::error::{Error, Result};
use crate::model::SequentialModel;
use crate::tensor::Tensor;

/// Floating-point allowance when comparing measured gaps to the bound,
/// relative to the signal scale `max(B, 1)`.
const ROUNDING_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCertificate {
    pub tau: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub epsilon: f64,
    pub layers: usize,
    pub bound: f64,
    /// All activations are 1-Lipschitz.
    pub assumptions_ok: bool,
    /// Measured `||y_hat - Pi y||_2` per probe sample.
    pub sample_errors: Vec<f64>,
    /// Every sample is within the bound.
    pub holds: bool,
    /// The per-layer recursion held for every layer and sample.
    pub recursion_holds: bool,
}

/// `eps * B * sum_{k<L} (tau + eps)^k`, which equals
/// `eps ((tau+eps)^L - 1) / (tau+eps-1) B` away from `tau + eps = 1` and
/// `eps L B` at it.
pub fn certificate_bound(tau: f64, epsilon: f64, b: f64, layers: usize) -> f64 {
    let ratio = tau + epsilon;
    let mut sum = 0.0;
    let mut term = 1.0;
    for _ in 0..layers {
        sum += term;
        term *= ratio;
    }
    epsilon * sum * b
}

/// `||Pi_l x_{l+1} - x_hat_{l+1}||_2` for every layer (outer) and probe sample (inner).
pub fn propagation_errors(
    original: &SequentialModel,
    repurposed: &RepurposedModel,
    probe: &Tensor,
) -> Result<Vec<Vec<f64>>> {
    let orig = original.forward(probe)?;
    let rep = repurposed.model.forward(probe)?;
    if orig.len() != rep.len() || repurposed.permutations.len() != orig.len() + 1 {
        return Err(Error::Shape("restructured model depth differs from the original".into()));
    }
    Ok(orig
        .iter()
        .zip(&rep)
        .enumerate()
        .map(|(l, (o, r))| {
            let aligned = repurposed.permutations[l + 1].apply_rows(&o.post);
            column_distances(&aligned, &r.post)
        })
        .collect())
}

fn column_distances(a: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..a.cols())
        .map(|s| (0..a.rows()).map(|r| (a.get(r, s) - b.get(r, s)).powi(2)).sum::<f64>().sqrt())
        .collect()
}

fn column_norms(a: &Tensor) -> impl Iterator<Item = f64> + '_ {
    (0..a.cols()).map(move |s| (0..a.rows()).map(|r| a.get(r, s).powi(2)).sum::<f64>().sqrt())
}

/// Bounds the output gap between `original` and `repurposed` for the
/// distribution the probe batch represents; `B` is measured on the probe.
pub fn error_certificate(
    original: &SequentialModel,
    repurposed: &RepurposedModel,
    probe: &Tensor,
) -> Result<ErrorCertificate> {
    if probe.rank() != 2 || probe.cols() == 0 {
        return Err(Error::Shape("probe batch must be a nonempty (in, K) matrix".into()));
    }
    let dense = original.dense_layers()?;
    if let Some((l, d)) = dense.iter().enumerate().find(|(_, d)| !d.activation.is_one_lipschitz()) {
        return Err(Error::CertificateRefused(format!(
            "layer {l} activation {} is not 1-Lipschitz",
            d.activation.name()
        )));
    }
    let depth = dense.len();
    let tau = dense.iter().map(|d| d.weight.frobenius_norm()).fold(0.0, f64::max);
    let epsilon = repurposed.max_deviation();

    // Signals entering each layer: the probe, then every hidden output.
    let traces = original.forward(probe)?;
    let b = std::iter::once(probe)
        .chain(traces.iter().take(depth - 1).map(|t| &t.post))
        .flat_map(column_norms)
        .fold(0.0, f64::max);

    let bound = certificate_bound(tau, epsilon, b, depth);
    let slack = ROUNDING_SLACK * b.max(1.0);
    let errors = propagation_errors(original, repurposed, probe)?;
    let sample_errors = errors.last().cloned().unwrap_or_default();
    let holds = sample_errors.iter().all(|&e| e <= bound + slack);

    let mut recursion_holds = true;
    for s in 0..probe.cols() {
        let mut prev = 0.0;
        for layer_errors in &errors {
            let e = layer_errors[s];
            if e > (tau + epsilon) * prev + epsilon * b + slack {
                recursion_holds = false;
            }
            prev = e;
        }
    }

    Ok(ErrorCertificate {
        tau,
        b,
        epsilon,
        layers: depth,
        bound,
        assumptions_ok: true,
        sample_errors,
        holds,
        recursion_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_special_cases() {
        assert!((certificate_bound(2.5, 0.3, 4.0, 1) - 0.3 * 4.0).abs() < 1e-15);
        // tau + eps = 1 collapses to eps L B.
        assert!((certificate_bound(0.75, 0.25, 2.0, 5) - 0.25 * 5.0 * 2.0).abs() < 1e-15);
        // Normalized weights: ((1 + eps)^L - 1) B.
        let (eps, b, l) = (0.1f64, 3.0, 4);
        let expected = ((1.0 + eps).powi(l as i32) - 1.0) * b;
        assert!((certificate_bound(1.0, eps, b, l) - expected).abs() < 1e-12);
        // Closed form away from the singularity.
        let (tau, eps) = (1.7f64, 0.2);
        let r = tau + eps;
        let closed = eps * (r.powi(3) - 1.0) / (r - 1.0) * 2.0;
        assert!((certificate_bound(tau, eps, 2.0, 3) - closed).abs() < 1e-12 * closed);
    }
}
