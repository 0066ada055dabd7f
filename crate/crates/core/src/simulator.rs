//! Analytic timing model for distributed inference of a stack of equal-width
//! dense layers.
//!
//! Each node owns `N/P` neurons per layer. Diagonal blocks stay dense, a
//! fraction `1 - s` of cross-block weights survives. Layers run in strict
//! order: a node starts layer `l + 1` only after all its inputs have arrived,
//! so time per layer is compute plus communication.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Every pair communicates at full link bandwidth.
    FullBisection,
    /// Peers share one medium; each node's bandwidth is split `P - 1` ways.
    SharedMedium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub name: String,
    /// Peak tera-operations per second per node.
    pub node_tops: f64,
    /// Fraction of peak reached on matrix-vector work, in `(0, 1]`.
    pub efficiency: f64,
    pub node_memory_bytes: u64,
    /// Bytes per second.
    pub link_bandwidth: f64,
    /// Seconds per message.
    pub link_latency: f64,
    pub topology: Topology,
}

impl PlatformConfig {
    pub fn datacenter() -> Self {
        serde_json::from_str(include_str!("../platforms/datacenter.json")).expect("bundled platform")
    }

    pub fn edge() -> Self {
        serde_json::from_str(include_str!("../platforms/edge.json")).expect("bundled platform")
    }

    /// Bundled platform by name, or a JSON file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "datacenter" => Ok(Self::datacenter()),
            "edge" => Ok(Self::edge()),
            path => {
                let cfg: Self = crate::io::read_json(Path::new(path))?;
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates_ok = self.node_tops > 0.0 && self.link_bandwidth > 0.0 && self.node_memory_bytes > 0;
        let eff_ok = self.efficiency > 0.0 && self.efficiency <= 1.0;
        if !(rates_ok && eff_ok && self.link_latency >= 0.0 && self.link_latency.is_finite()) {
            return Err(Error::Config(format!("invalid platform {:?}", self.name)));
        }
        Ok(())
    }

    /// Sustained operations per second.
    pub fn ops_per_second(&self) -> f64 {
        self.node_tops * 1e12 * self.efficiency
    }

    pub fn effective_bandwidth(&self, nodes: usize) -> f64 {
        match self.topology {
            Topology::FullBisection => self.link_bandwidth,
            Topology::SharedMedium => self.link_bandwidth / (nodes.max(2) - 1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub layers: usize,
    pub neurons: usize,
    pub element_bytes: u64,
    /// Fraction of cross-block weights removed.
    pub sparsity: f64,
    pub nodes: usize,
}

impl Workload {
    pub fn new(neurons: usize, nodes: usize, sparsity: f64) -> Self {
        Self { layers: 5, neurons, element_bytes: 4, sparsity, nodes }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) || self.nodes == 0 || self.layers == 0 || self.neurons == 0 {
            return Err(Error::Config(format!("invalid workload {self:?}")));
        }
        Ok(())
    }

    /// Per-node multiply-adds (two operations each) for one layer and sample.
    pub fn ops_per_node(&self) -> f64 {
        let n = self.neurons as f64;
        let local = n / self.nodes as f64;
        2.0 * local * (local + (1.0 - self.sparsity) * (n - local))
    }

    /// Dense weight bytes each node stores for the whole stack.
    pub fn dense_weight_bytes_per_node(&self) -> u64 {
        let n = self.neurons as u64;
        let local = n.div_ceil(self.nodes as u64);
        self.layers as u64 * n * local * self.element_bytes
    }
}

/// Bytes each node sends per sample and layer: its `N/P` outputs, thinned to
/// the surviving `1 - s` fraction, to each of the `P - 1` peers.
pub fn theoretical_comm_per_node(neurons: usize, nodes: usize, sparsity: f64, element_bytes: u64) -> f64 {
    if nodes <= 1 {
        return 0.0;
    }
    let p = nodes as f64;
    neurons as f64 / p * (p - 1.0) * (1.0 - sparsity) * element_bytes as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub compute_s: f64,
    pub comm_s: f64,
}

impl LayerTiming {
    pub fn total_s(&self) -> f64 {
        self.compute_s + self.comm_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub compute: f64,
    pub comm: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub platform: String,
    pub workload: Workload,
    pub layers: Vec<LayerTiming>,
    pub compute_s: f64,
    pub comm_s: f64,
    pub total_s: f64,
    /// Dense (`s = 0`) totals on the same platform and node count.
    pub baseline: LayerTiming,
    pub speedup: Speedup,
}

impl SimReport {
    pub fn comm_share(&self) -> f64 {
        self.comm_s / self.total_s
    }

    /// CSV with columns `N,P,flavor,layer,compute_s,comm_s,total_s`.
    pub fn write_csv(&self, out: impl Write, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            w.write_record(["N", "P", "flavor", "layer", "compute_s", "comm_s", "total_s"])?;
        }
        for (l, t) in self.layers.iter().enumerate() {
            w.serialize((
                self.workload.neurons,
                self.workload.nodes,
                flavor_name(self.workload.sparsity),
                l,
                t.compute_s,
                t.comm_s,
                t.total_s(),
            ))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// `RP-50` style label, `dense` for zero sparsity.
pub fn flavor_name(sparsity: f64) -> String {
    if sparsity == 0.0 {
        "dense".into()
    } else {
        format!("RP-{}", (sparsity * 100.0).round())
    }
}

fn layer_timing(platform: &PlatformConfig, w: &Workload) -> LayerTiming {
    let compute_s = w.ops_per_node() / platform.ops_per_second();
    let comm_s = if w.nodes <= 1 {
        0.0
    } else {
        let payload = theoretical_comm_per_node(w.neurons, w.nodes, w.sparsity, w.element_bytes);
        platform.link_latency + payload / platform.effective_bandwidth(w.nodes)
    };
    LayerTiming { compute_s, comm_s }
}

fn ratio(base: f64, new: f64) -> f64 {
    if base == 0.0 && new == 0.0 {
        1.0
    } else {
        base / new
    }
}

pub fn simulate(platform: &PlatformConfig, workload: &Workload) -> Result<SimReport> {
    platform.validate()?;
    workload.validate()?;
    let needed = workload.dense_weight_bytes_per_node();
    if needed > platform.node_memory_bytes {
        return Err(Error::MemoryOverflow { needed, available: platform.node_memory_bytes });
    }
    let per_layer = layer_timing(platform, workload);
    let dense = layer_timing(platform, &Workload { sparsity: 0.0, ..*workload });
    let layers = vec![per_layer; workload.layers];
    let compute_s: f64 = layers.iter().map(|t| t.compute_s).sum();
    let comm_s: f64 = layers.iter().map(|t| t.comm_s).sum();
    let depth = workload.layers as f64;
    let baseline = LayerTiming { compute_s: dense.compute_s * depth, comm_s: dense.comm_s * depth };
    let total_s = compute_s + comm_s;
    Ok(SimReport {
        platform: platform.name.clone(),
        workload: *workload,
        layers,
        compute_s,
        comm_s,
        total_s,
        baseline,
        speedup: Speedup {
            compute: ratio(baseline.compute_s, compute_s),
            comm: ratio(baseline.comm_s, comm_s),
            total: ratio(baseline.total_s(), total_s),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub neurons: usize,
    pub flavor: String,
    pub sparsity: f64,
    pub compute: f64,
    pub comm: f64,
    pub total: f64,
    /// Node counts that fit in memory and entered the average.
    pub node_counts: Vec<usize>,
}

/// Speedups over the dense baseline per flavor, averaged across every node
/// count whose dense weights fit in node memory.
pub fn speedup_report(
    platform: &PlatformConfig,
    neurons: usize,
    flavors: &[f64],
    node_counts: &[usize],
) -> Result<Vec<SpeedupRow>> {
    flavors
        .iter()
        .map(|&s| {
            let mut used = Vec::new();
            let (mut compute, mut comm, mut total) = (0.0, 0.0, 0.0);
            for &p in node_counts {
                match simulate(platform, &Workload::new(neurons, p, s)) {
                    Ok(r) => {
                        compute += r.speedup.compute;
                        comm += r.speedup.comm;
                        total += r.speedup.total;
                        used.push(p);
                    }
                    Err(Error::MemoryOverflow { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            if used.is_empty() {
                return Err(Error::MemoryOverflow {
                    needed: Workload::new(neurons, *node_counts.iter().max().unwrap_or(&1), s)
                        .dense_weight_bytes_per_node(),
                    available: platform.node_memory_bytes,
                });
            }
            let n = used.len() as f64;
            Ok(SpeedupRow {
                neurons,
                flavor: flavor_name(s),
                sparsity: s,
                compute: compute / n,
                comm: comm / n,
                total: total / n,
                node_counts: used,
            })
        })
        .collect()
}

pub fn write_speedup_csv(rows: &[SpeedupRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "flavor", "compute_speedup", "comm_speedup", "total_speedup", "nodes_averaged"])?;
    for r in rows {
        w.serialize((r.neurons, &r.flavor, r.compute, r.comm, r.total, r.node_counts.len()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Accuracy of averaging `P` per-node digit classifications, each correct with
/// probability `rho`: `(1 + 8 rho^P) / 9`.
pub fn naive_average_accuracy(rho: f64, nodes: u32) -> f64 {
    (1.0 + 8.0 * rho.powi(nodes as i32)) / 9.0
}
