//! Implementations checked against independent brute-force oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repurpose_core::assignment::{
    asymptotic_log_estimate, assign_neurons, brute_force_assign, build_cost_matrix, column_cost, count_assignments,
    for_each_assignment, munkres, RepurposeConfig,
};
use repurpose_core::dist::{distributed_forward, shard_model, ExecMode};
use repurpose_core::model::{Activation, ConvLayer};
use repurpose_core::partition::{balanced_counts, build_mask, cross_edge_count, owners, PartitionSpec};
use repurpose_core::repurpose::{repurpose_conv, repurpose_model};
use repurpose_core::synth::{random_batch, random_model};
use repurpose_core::tensor::{max_relative_error, Tensor};

/// Minimum of `||w - v||^2 + eta1 ||v||_0 + eta2 ||v cross||_0` over all
/// support patterns of `v` (kept entries equal `w`).
fn support_oracle(w: &[f64], owner: &[usize], worker: usize, eta1: f64, eta2: f64) -> f64 {
    let n = w.len();
    (0u32..1 << n)
        .map(|mask| {
            (0..n)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        eta1 + if owner[i] != worker { eta2 } else { 0.0 }
                    } else {
                        w[i] * w[i]
                    }
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn objective(w: &[f64], v: &[f64], owner: &[usize], worker: usize, eta1: f64, eta2: f64) -> f64 {
    w.iter()
        .zip(v)
        .zip(owner)
        .map(|((a, b), &o)| {
            let kept = *b != 0.0;
            (a - b).powi(2) + if kept { eta1 + if o != worker { eta2 } else { 0.0 } } else { 0.0 }
        })
        .sum()
}

#[test]
fn column_cost_example_against_support_enumeration() {
    let cfg = RepurposeConfig::new(0.0, 1.0).unwrap();
    for (worker, want) in [(0, 0.01), (1, 1.0)] {
        let (_, c) = column_cost(&[3.0, 0.1], &[1, 1], worker, &cfg).unwrap();
        let oracle = support_oracle(&[3.0, 0.1], &[0, 1], worker, 0.0, 1.0);
        assert!((c - oracle).abs() <= 1e-12 && (c - want).abs() <= 1e-12);
    }
}

#[test]
fn column_cost_matches_support_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let grid = [0.0, 0.01, 0.1, 1.0];
    for _ in 0..300 {
        let len = rng.gen_range(1..=6);
        let workers = rng.gen_range(1..=3);
        let mut in_counts = vec![0; workers];
        for _ in 0..len {
            in_counts[rng.gen_range(0..workers)] += 1;
        }
        let owner = owners(&in_counts);
        let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.2..1.2)).collect();
        for &eta1 in &grid {
            for &eta2 in &grid {
                let cfg = RepurposeConfig::new(eta1, eta2).unwrap();
                for j in 0..workers {
                    let (v, c) = column_cost(&w, &in_counts, j, &cfg).unwrap();
                    let oracle = support_oracle(&w, &owner, j, eta1, eta2);
                    assert!((c - oracle).abs() <= 1e-12, "{w:?} {in_counts:?} j={j} {c} vs {oracle}");
                    assert!((objective(&w, &v, &owner, j, eta1, eta2) - oracle).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn cost_matrix_matches_columnwise_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (rows, cols) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let w = random_batch(&mut rng, rows, cols, 1.0);
        let in_counts = balanced_counts(rows, rng.gen_range(1..4));
        let cfg = RepurposeConfig::new(rng.gen_range(0.0..0.2), rng.gen_range(0.0..0.5)).unwrap();
        let c = build_cost_matrix(&w, &in_counts, &cfg).unwrap();
        for j in 0..in_counts.len() {
            for i in 0..cols {
                assert_eq!(c.get(j, i), column_cost(&w.column(i), &in_counts, j, &cfg).unwrap().1);
            }
        }
    }
}

#[test]
fn p1_cost_is_sum_of_min_terms() {
    let w = Tensor::from_rows(&[vec![0.2, -1.0], vec![0.9, 0.05], vec![-0.4, 0.3]]).unwrap();
    let c = build_cost_matrix(&w, &[3], &RepurposeConfig::new(0.1, 7.0).unwrap()).unwrap();
    for i in 0..2 {
        let want: f64 = w.column(i).iter().map(|v| (v * v).min(0.1)).sum();
        assert!((c.get(0, i) - want).abs() < 1e-15);
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn munkres_matches_factorial_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for n in 1..=6 {
        let perms = permutations(n);
        for _ in 0..20 {
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(r, &c)| m[r][c]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let got = munkres(&m).unwrap();
            assert!((got.total - best).abs() <= 1e-9);
            let mut cols: Vec<usize> = got.pairs.iter().map(|p| p.1).collect();
            cols.sort_unstable();
            assert_eq!(cols, (0..n).collect::<Vec<_>>());
        }
    }
}

/// Every map from neurons to workers honoring the counts, scored with the
/// support-enumeration oracle.
fn assignment_oracle(w: &Tensor, in_counts: &[usize], out_counts: &[usize], eta1: f64, eta2: f64) -> f64 {
    let (n, p) = (w.cols(), out_counts.len());
    let owner = owners(in_counts);
    let costs: Vec<Vec<f64>> =
        (0..p).map(|j| (0..n).map(|i| support_oracle(&w.column(i), &owner, j, eta1, eta2)).collect()).collect();
    let mut best = f64::INFINITY;
    let total = p.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut counts = vec![0; p];
        let mut sum = 0.0;
        for i in 0..n {
            let k = c % p;
            c /= p;
            counts[k] += 1;
            sum += costs[k][i];
        }
        if counts == out_counts {
            best = best.min(sum);
        }
    }
    best
}

#[test]
fn assign_neurons_is_optimal_against_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..60 {
        let n = rng.gen_range(1..=6);
        let p = rng.gen_range(1..=3);
        let rows = rng.gen_range(1..=5);
        let w = random_batch(&mut rng, rows, n, 1.0);
        let in_counts = balanced_counts(rows, p);
        let out_counts = balanced_counts(n, p);
        let (eta1, eta2) = (rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.6));
        let cfg = RepurposeConfig::new(eta1, eta2).unwrap();
        let got = assign_neurons(&w, &in_counts, &out_counts, &cfg).unwrap();
        let oracle = assignment_oracle(&w, &in_counts, &out_counts, eta1, eta2);
        assert!((got.total_cost - oracle).abs() <= 1e-9, "{} vs {oracle}", got.total_cost);
        let brute = brute_force_assign(&w, &in_counts, &out_counts, &cfg).unwrap();
        assert!((got.total_cost - brute.total_cost).abs() <= 1e-9);
        let sum: f64 = got.per_neuron_cost.iter().sum();
        assert!((sum - got.total_cost).abs() <= 1e-12);
    }
}

#[test]
fn counting_matches_enumeration_and_asymptotics() {
    for counts in [vec![2, 2], vec![2, 2, 2], vec![3, 1, 2], vec![4, 0, 1]] {
        let n = counts.iter().sum();
        let visited = for_each_assignment(&counts, |_| {});
        assert_eq!(count_assignments(n, &counts).unwrap().to_string(), visited.to_string());
    }
    for &p in &[2usize, 4] {
        for &n in &[16usize, 32, 64] {
            let exact: f64 = count_assignments(n, &balanced_counts(n, p)).unwrap().to_string().parse().unwrap();
            // Independent log-multinomial via log-factorial sums.
            let lf = |m: usize| (1..=m).map(|k| (k as f64).ln()).sum::<f64>();
            let ln_oracle = lf(n) - (n / p) as f64 * 0.0 - p as f64 * lf(n / p);
            assert!((exact.ln() - ln_oracle).abs() < 1e-9);
            let gap = (ln_oracle - asymptotic_log_estimate(n, p)).abs();
            assert!(gap <= 2.0 * (n as f64).ln(), "n={n} p={p} gap={gap}");
        }
    }
}

#[test]
fn conv_channel_cost_matches_filter_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..40 {
        let c_in = rng.gen_range(1..=4);
        let c_out = rng.gen_range(1..=4);
        let p = rng.gen_range(1..=c_in.min(c_out));
        let shape = vec![2, 3, c_in, c_out];
        let len: usize = shape.iter().product();
        let kernel = Tensor::new(shape, (0..len).map(|_| rng.gen_range(-0.6..0.6)).collect()).unwrap();
        let layer = ConvLayer::new(kernel, Tensor::vector(vec![0.0; c_out]).unwrap(), Activation::Relu).unwrap();
        let (in_counts, out_counts) = (balanced_counts(c_in, p), balanced_counts(c_out, p));
        let (eta1, eta2) = (rng.gen_range(0.0..0.3), rng.gen_range(0.0..1.5));
        let cfg = RepurposeConfig::new(eta1, eta2).unwrap();
        let r = repurpose_conv(&layer, &in_counts, &out_counts, &cfg).unwrap();

        let owner = owners(&in_counts);
        let out_owner = owners(&out_counts);
        for i in 0..c_out {
            let worker = out_owner[r.permutation.apply_index(i)];
            // Enumerate keep/drop for every filter of output channel i.
            let energies: Vec<f64> = (0..c_in).map(|l| layer.filter_energy(l, i)).collect();
            let best = (0u32..1 << c_in)
                .map(|mask| {
                    (0..c_in)
                        .map(|l| {
                            if mask >> l & 1 == 1 {
                                eta1 + if owner[l] != worker { eta2 } else { 0.0 }
                            } else {
                                energies[l]
                            }
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((r.per_channel_cost[i] - best).abs() <= 1e-12);
        }
        // Survivors are bitwise copies; spatial taps are not moved.
        let (src, dst) = (layer.kernel.data(), r.layer.kernel.data());
        for s in 0..layer.spatial_len() {
            for l in 0..c_in {
                for i in 0..c_out {
                    let v = dst[layer.index(s, l, r.permutation.apply_index(i))];
                    assert!(v == 0.0 || v == src[layer.index(s, l, i)]);
                }
            }
        }
    }
}

#[test]
fn sharded_execution_matches_monolithic_and_naive_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..30 {
        let p = rng.gen_range(1..=4);
        let widths: Vec<usize> = (0..4).map(|_| rng.gen_range(p..=12)).collect();
        let model = random_model(&mut rng, &widths, Activation::Tanh, 1.0);
        let spec = PartitionSpec::balanced(p, &widths).unwrap();
        let rep = repurpose_model(&model, &spec, &RepurposeConfig::new(0.0, rng.gen_range(0.0..0.5)).unwrap()).unwrap();
        let sharded = shard_model(&rep.model, &spec).unwrap();
        let x = random_batch(&mut rng, widths[0], 3, 1.0);
        let mode = if trial % 2 == 0 { ExecMode::Sequential } else { ExecMode::Parallel };
        let out = distributed_forward(&sharded, &x, mode).unwrap();
        let want = rep.model.output(&x).unwrap();
        assert!(max_relative_error(&out.concat().unwrap(), &want) <= 1e-9);

        for (l, layer) in rep.model.dense_layers().unwrap().iter().enumerate() {
            let w = &layer.weight;
            assert_eq!(&sharded.layers[l].reassemble(), w);
            let (ro, co) = (owners(&spec.counts[l]), owners(&spec.counts[l + 1]));
            let mut naive_mults = vec![0u64; p];
            let mut naive_values = 0u64;
            for k in 0..p {
                let ok = co.iter().filter(|&&o| o == k).count() as u64;
                for r in 0..w.rows() {
                    let needed = ro[r] == k || (0..w.cols()).any(|c| co[c] == k && w.get(r, c) != 0.0);
                    if needed {
                        naive_mults[k] += ok;
                    }
                    if ro[r] != k && needed {
                        naive_values += 1;
                    }
                }
            }
            assert_eq!(out.multiplies[l], naive_mults);
            assert_eq!(out.comm.layer_values(l), naive_values);
            let mask = build_mask(&spec.counts[l], &spec.counts[l + 1]).unwrap();
            assert!(out.comm.layer_values(l) as usize <= cross_edge_count(w, &mask).unwrap());
        }
        if p == 1 {
            assert!(out.comm.records.is_empty());
        }
    }
}
