//! Exhaustive search over every block-respecting assignment. Exponential;
//! used as an optimality oracle on small layers.

use num_bigint::BigUint;

use super::{build_cost_matrix, AssignmentResult, CostMatrix, RepurposeConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Calls `visit` with the worker of each neuron for every assignment that puts
/// exactly `counts[k]` neurons on worker `k`. Returns the number visited.
pub fn for_each_assignment(counts: &[usize], mut visit: impl FnMut(&[usize])) -> u64 {
    let n: usize = counts.iter().sum();
    let mut remaining = counts.to_vec();
    let mut current = Vec::with_capacity(n);
    let mut visited = 0;
    recurse(n, &mut remaining, &mut current, &mut visit, &mut visited);
    visited
}

fn recurse(
    n: usize,
    remaining: &mut [usize],
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
    visited: &mut u64,
) {
    if current.len() == n {
        *visited += 1;
        visit(current);
        return;
    }
    for k in 0..remaining.len() {
        if remaining[k] == 0 {
            continue;
        }
        remaining[k] -= 1;
        current.push(k);
        recurse(n, remaining, current, visit, visited);
        current.pop();
        remaining[k] += 1;
    }
}

/// Global minimum by enumeration, refusing more than `cap` candidates.
pub fn brute_force_assign_capped(
    w: &Tensor,
    in_counts: &[usize],
    out_counts: &[usize],
    cfg: &RepurposeConfig,
    cap: u64,
) -> Result<AssignmentResult> {
    let cost = build_cost_matrix(w, in_counts, cfg)?.with_expansion(out_counts)?;
    brute_force_from_costs(&cost, cap)
}

pub fn brute_force_assign(
    w: &Tensor,
    in_counts: &[usize],
    out_counts: &[usize],
    cfg: &RepurposeConfig,
) -> Result<AssignmentResult> {
    brute_force_assign_capped(w, in_counts, out_counts, cfg, DEFAULT_ENUMERATION_CAP)
}

pub(crate) fn brute_force_from_costs(cost: &CostMatrix, cap: u64) -> Result<AssignmentResult> {
    let needed = super::count_assignments(cost.neurons(), cost.expansion_counts())
        .map_err(|e| Error::Infeasible(e.to_string()))?;
    if needed > BigUint::from(cap) {
        return Err(Error::EnumerationCap { needed: needed.to_string(), cap });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_assignment(cost.expansion_counts(), |workers| {
        let total: f64 = workers.iter().enumerate().map(|(i, &k)| cost.get(k, i)).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, workers.to_vec()));
        }
    });
    let (_, worker_of) = best.expect("at least one assignment");
    AssignmentResult::from_workers(cost, worker_of)
}
