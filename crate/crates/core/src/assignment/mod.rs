//! Neuron-to-worker assignment.
//!
//! Each output neuron `i` gets a cost `C[j][i]` for landing on worker `j`: the
//! smallest value of `||w_i - v||^2 + eta1 ||v||_0 + eta2 ||v outside j||_0`
//! over all replacement columns `v`. The minimizer keeps an entry only when its
//! square exceeds the applicable threshold, so the cost is a sum of
//! `min(w^2, eta)` terms. A square assignment over expanded worker slots then
//! picks the cheapest placement with the requested block sizes.

mod brute;
mod counting;
mod munkres;

pub use brute::{brute_force_assign, brute_force_assign_capped, for_each_assignment, DEFAULT_ENUMERATION_CAP};
pub use counting::{asymptotic_log_estimate, count_assignments};
pub use munkres::{munkres, Matching};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{offsets, owners, Permutation};
use crate::tensor::Tensor;

/// Penalties on total sparsity (`eta1`) and cross-worker weights (`eta2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepurposeConfig {
    pub eta1: f64,
    pub eta2: f64,
}

impl RepurposeConfig {
    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        if !(eta1.is_finite() && eta1 >= 0.0 && eta2.is_finite() && eta2 >= 0.0) {
            return Err(Error::Config(format!("penalties must be finite and >= 0, got ({eta1}, {eta2})")));
        }
        Ok(Self { eta1, eta2 })
    }

    pub const fn zero() -> Self {
        Self { eta1: 0.0, eta2: 0.0 }
    }

    /// Threshold for a weight that stays inside (`false`) or crosses (`true`) workers.
    #[inline]
    pub fn threshold(&self, cross: bool) -> f64 {
        if cross {
            self.eta1 + self.eta2
        } else {
            self.eta1
        }
    }
}

/// Whether a weight survives hard-thresholding at `threshold`, i.e.
/// `w^2 > threshold`. Ties prune. A zero threshold keeps every nonzero even
/// when `w^2` underflows.
#[inline]
pub fn survives(w: f64, threshold: f64) -> bool {
    if threshold == 0.0 {
        w != 0.0
    } else {
        w * w > threshold
    }
}

/// Optimal pruned column and its cost for placing a neuron with fan-in `w`
/// on worker `worker` (0-based), given how the inputs are split.
pub fn column_cost(
    w: &[f64],
    in_counts: &[usize],
    worker: usize,
    cfg: &RepurposeConfig,
) -> Result<(Vec<f64>, f64)> {
    check_column(w, in_counts, worker)?;
    let mut pruned = w.to_vec();
    let mut cost = 0.0;
    for (idx, owner) in owners(in_counts).into_iter().enumerate() {
        let eta = cfg.threshold(owner != worker);
        let v = w[idx];
        if survives(v, eta) {
            cost += eta;
        } else {
            cost += v * v;
            pruned[idx] = 0.0;
        }
    }
    Ok((pruned, cost))
}

fn check_column(w: &[f64], in_counts: &[usize], worker: usize) -> Result<()> {
    if worker >= in_counts.len() {
        return Err(Error::WorkerOutOfRange { worker, workers: in_counts.len() });
    }
    let total: usize = in_counts.iter().sum();
    if total != w.len() {
        return Err(Error::Shape(format!("column has {} entries, input counts sum to {total}", w.len())));
    }
    Ok(())
}

// Cost only, same accumulation order as `column_cost`.
#[inline]
fn column_cost_value(w: impl Iterator<Item = f64>, row_owner: &[usize], worker: usize, cfg: &RepurposeConfig) -> f64 {
    let mut cost = 0.0;
    for (v, &owner) in w.zip(row_owner) {
        let eta = cfg.threshold(owner != worker);
        cost += if survives(v, eta) { eta } else { v * v };
    }
    cost
}

/// `P x N` assignment costs plus the number of slots each worker row expands to.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    workers: usize,
    neurons: usize,
    values: Vec<f64>,
    expansion_counts: Vec<usize>,
}

impl CostMatrix {
    /// Wraps precomputed costs (`values[j * neurons + i]`).
    pub fn from_values(workers: usize, neurons: usize, values: Vec<f64>, expansion_counts: Vec<usize>) -> Result<Self> {
        if values.len() != workers * neurons {
            return Err(Error::Shape(format!("{} costs for {workers}x{neurons}", values.len())));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost { row: idx / neurons.max(1), col: idx % neurons.max(1) });
        }
        if expansion_counts.len() != workers {
            return Err(Error::Partition(format!(
                "{} output counts for {workers} workers",
                expansion_counts.len()
            )));
        }
        Ok(Self { workers, neurons, values, expansion_counts })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    #[inline]
    pub fn get(&self, worker: usize, neuron: usize) -> f64 {
        self.values[worker * self.neurons + neuron]
    }

    pub fn row(&self, worker: usize) -> &[f64] {
        &self.values[worker * self.neurons..(worker + 1) * self.neurons]
    }

    pub fn expansion_counts(&self) -> &[usize] {
        &self.expansion_counts
    }

    pub fn with_expansion(mut self, out_counts: &[usize]) -> Result<Self> {
        if out_counts.len() != self.workers {
            return Err(Error::Partition(format!(
                "{} output counts for {} workers",
                out_counts.len(),
                self.workers
            )));
        }
        self.expansion_counts = out_counts.to_vec();
        Ok(self)
    }
}

/// Costs of every (worker, output neuron) pair for a weight matrix `(in, out)`.
/// The expansion counts default to a balanced split; use
/// [`CostMatrix::with_expansion`] to change them.
pub fn build_cost_matrix(w: &Tensor, in_counts: &[usize], cfg: &RepurposeConfig) -> Result<CostMatrix> {
    if w.rank() != 2 {
        return Err(Error::Shape(format!("weight must be 2-D, got {:?}", w.shape())));
    }
    let (rows, cols, workers) = (w.rows(), w.cols(), in_counts.len());
    if workers == 0 {
        return Err(Error::Partition("need at least one worker".into()));
    }
    check_column(&vec![0.0; rows], in_counts, 0)?;
    let row_owner = owners(in_counts);
    let per_column: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            (0..workers)
                .map(|j| column_cost_value((0..rows).map(|r| w.get(r, c)), &row_owner, j, cfg))
                .collect()
        })
        .collect();
    let mut values = vec![0.0; workers * cols];
    for (c, costs) in per_column.into_iter().enumerate() {
        for (j, v) in costs.into_iter().enumerate() {
            values[j * cols + c] = v;
        }
    }
    CostMatrix::from_values(workers, cols, values, crate::partition::balanced_counts(cols, workers))
}

/// An assignment of output neurons to contiguous worker blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub permutation: Permutation,
    /// Worker chosen for each original neuron.
    pub worker_of: Vec<usize>,
    pub total_cost: f64,
    pub per_neuron_cost: Vec<f64>,
}

impl AssignmentResult {
    /// Builds the canonical result: within a worker, neurons keep ascending
    /// original order.
    pub fn from_workers(cost: &CostMatrix, worker_of: Vec<usize>) -> Result<Self> {
        let counts = cost.expansion_counts();
        let mut next = offsets(counts);
        let mut map = vec![0; worker_of.len()];
        for (i, &k) in worker_of.iter().enumerate() {
            if k >= counts.len() || next[k] >= offsets(counts)[k + 1] {
                return Err(Error::Infeasible(format!("worker {k} over-assigned")));
            }
            map[i] = next[k];
            next[k] += 1;
        }
        let per_neuron_cost: Vec<f64> = worker_of.iter().enumerate().map(|(i, &k)| cost.get(k, i)).collect();
        let total_cost = per_neuron_cost.iter().sum();
        Ok(Self { permutation: Permutation::new(map)?, worker_of, total_cost, per_neuron_cost })
    }
}

fn check_counts(cost: &CostMatrix) -> Result<()> {
    let total: usize = cost.expansion_counts().iter().sum();
    if total != cost.neurons() {
        return Err(Error::Infeasible(format!(
            "output counts sum to {total}, layer has {} neurons",
            cost.neurons()
        )));
    }
    Ok(())
}

/// Solves the slot assignment for a cost matrix whose rows are expanded
/// virtually by their expansion counts.
pub fn assign_from_costs(cost: &CostMatrix) -> Result<AssignmentResult> {
    check_counts(cost)?;
    let slot_owner = owners(cost.expansion_counts());
    let n = cost.neurons();
    let slot_to_neuron = munkres::solve(n, |slot, neuron| cost.get(slot_owner[slot], neuron));
    let mut worker_of = vec![0; n];
    for (slot, &neuron) in slot_to_neuron.iter().enumerate() {
        worker_of[neuron] = slot_owner[slot];
    }
    AssignmentResult::from_workers(cost, worker_of)
}

/// Optimal permutation of a layer's output neurons onto workers with
/// `out_counts[k]` neurons each.
pub fn assign_neurons(
    w: &Tensor,
    in_counts: &[usize],
    out_counts: &[usize],
    cfg: &RepurposeConfig,
) -> Result<AssignmentResult> {
    let cost = build_cost_matrix(w, in_counts, cfg)?.with_expansion(out_counts)?;
    assign_from_costs(&cost)
}
