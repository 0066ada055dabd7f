//! Sharded execution over logical workers.
//!
//! Worker `k` holds its diagonal block `W_kk` and, for every other worker `j`,
//! only the rows of `W_jk` that contain a nonzero (the set `Omega`). Each layer
//! worker `k` receives `x_j[Omega]` from `j` and computes
//! `y_k = W_kk^T x_k + b_k + sum_j W~_jk^T x~_j`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, SequentialModel};
use crate::partition::{offsets, PartitionSpec};
use crate::tensor::Tensor;

/// Bytes per activation value on the wire (f32).
pub const WIRE_ELEMENT_BYTES: u64 = 4;

/// Row-major matrix that may have zero rows or columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Block {
    fn slice(w: &Tensor, rows: &[usize], cols: std::ops::Range<usize>) -> Self {
        let data = rows.iter().flat_map(|&r| cols.clone().map(move |c| w.get(r, c))).collect();
        Self { rows: rows.len(), cols: cols.len(), data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Nonzero rows of the block that worker `dst` needs from worker `src`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossBlock {
    pub src: usize,
    /// Source-local indices of the rows carrying a nonzero (`Omega`), ascending.
    pub omega: Vec<usize>,
    /// `|Omega| x o_dst` restriction of the cross block.
    pub weights: Block,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerShard {
    pub diag: Block,
    pub bias: Vec<f64>,
    /// One entry per other worker, in ascending source order.
    pub cross: Vec<CrossBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardedLayer {
    pub activation: Activation,
    pub in_counts: Vec<usize>,
    pub out_counts: Vec<usize>,
    pub workers: Vec<WorkerShard>,
}

impl ShardedLayer {
    /// Rebuilds the full `(in, out)` weight matrix.
    pub fn reassemble(&self) -> Tensor {
        let (ri, co) = (offsets(&self.in_counts), offsets(&self.out_counts));
        let (rows, cols) = (*ri.last().unwrap(), *co.last().unwrap());
        let mut w = Tensor::zeros(vec![rows, cols]);
        for (k, shard) in self.workers.iter().enumerate() {
            for r in 0..shard.diag.rows {
                for c in 0..shard.diag.cols {
                    w.set(ri[k] + r, co[k] + c, shard.diag.get(r, c));
                }
            }
            for cb in &shard.cross {
                for (t, &r) in cb.omega.iter().enumerate() {
                    for c in 0..cb.weights.cols {
                        w.set(ri[cb.src] + r, co[k] + c, cb.weights.get(t, c));
                    }
                }
            }
        }
        w
    }

    /// Per-sample multiplies of worker `k`: `i_k o_k + sum |Omega| o_k`.
    pub fn multiplies(&self, k: usize) -> u64 {
        let s = &self.workers[k];
        let cross: usize = s.cross.iter().map(|c| c.omega.len()).sum();
        ((s.diag.rows + cross) * s.diag.cols) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardedModel {
    pub workers: usize,
    pub layers: Vec<ShardedLayer>,
}

/// Splits every dense layer into per-worker diagonal and compressed cross blocks.
pub fn shard_model(model: &SequentialModel, spec: &PartitionSpec) -> Result<ShardedModel> {
    spec.validate(model)?;
    let layers = model
        .dense_layers()?
        .iter()
        .enumerate()
        .map(|(l, d)| {
            let (in_counts, out_counts) = (&spec.counts[l], &spec.counts[l + 1]);
            let (ri, co) = (offsets(in_counts), offsets(out_counts));
            let w = &d.weight;
            let workers = (0..spec.workers)
                .map(|k| {
                    let cols = co[k]..co[k + 1];
                    let diag_rows: Vec<usize> = (ri[k]..ri[k + 1]).collect();
                    let cross = (0..spec.workers)
                        .filter(|&j| j != k)
                        .map(|j| {
                            let omega: Vec<usize> = (ri[j]..ri[j + 1])
                                .filter(|&r| cols.clone().any(|c| w.get(r, c) != 0.0))
                                .collect();
                            let weights = Block::slice(w, &omega, cols.clone());
                            CrossBlock { src: j, omega: omega.iter().map(|r| r - ri[j]).collect(), weights }
                        })
                        .collect();
                    WorkerShard {
                        diag: Block::slice(w, &diag_rows, cols.clone()),
                        bias: d.bias.data()[cols].to_vec(),
                        cross,
                    }
                })
                .collect();
            ShardedLayer {
                activation: d.activation,
                in_counts: in_counts.clone(),
                out_counts: out_counts.clone(),
                workers,
            }
        })
        .collect();
    Ok(ShardedModel { workers: spec.workers, layers })
}

/// Values sent from `src` to `dst` for one sample at `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRecord {
    pub layer: usize,
    pub src: usize,
    pub dst: usize,
    pub values: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLog {
    pub records: Vec<CommRecord>,
}

impl CommLog {
    pub fn total_values(&self) -> u64 {
        self.records.iter().map(|r| r.values).sum()
    }

    pub fn layer_values(&self, layer: usize) -> u64 {
        self.records.iter().filter(|r| r.layer == layer).map(|r| r.values).sum()
    }

    /// CSV with header `layer,src,dst,values,bytes`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(["layer", "src", "dst", "values", "bytes"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExecMode {
    #[default]
    Sequential,
    /// Workers of a layer run in parallel; layers are separated by a barrier.
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistOutput {
    /// Final-layer activations held by each worker, `o_k x K`.
    pub outputs: Vec<Block>,
    pub comm: CommLog,
    /// Per-sample multiplies, `[layer][worker]`.
    pub multiplies: Vec<Vec<u64>>,
}

impl DistOutput {
    /// Stacks the worker outputs back into one `(out, K)` matrix.
    pub fn concat(&self) -> Result<Tensor> {
        let k = self.outputs.iter().map(|b| b.cols).max().unwrap_or(0);
        let data: Vec<f64> = self.outputs.iter().flat_map(|b| b.data.iter().copied()).collect();
        let rows = self.outputs.iter().map(|b| b.rows).sum();
        Tensor::new(vec![rows, k], data)
    }

    pub fn worker_multiplies(&self, worker: usize) -> u64 {
        self.multiplies.iter().map(|l| l[worker]).sum()
    }
}

/// Runs the sharded model on a batch `x` of shape `(in, K)`.
pub fn distributed_forward(sharded: &ShardedModel, x: &Tensor, mode: ExecMode) -> Result<DistOutput> {
    let first = sharded.layers.first().ok_or_else(|| Error::Shape("empty sharded model".into()))?;
    let in_width: usize = first.in_counts.iter().sum();
    if x.rank() != 2 || x.rows() != in_width {
        return Err(Error::Partition(format!(
            "input batch {:?} does not match {in_width} partitioned inputs",
            x.shape()
        )));
    }
    let k = x.cols();
    let ri = offsets(&first.in_counts);
    let mut local: Vec<Block> = (0..sharded.workers)
        .map(|w| Block { rows: first.in_counts[w], cols: k, data: x.data()[ri[w] * k..ri[w + 1] * k].to_vec() })
        .collect();

    let mut comm = CommLog::default();
    let mut multiplies = Vec::with_capacity(sharded.layers.len());
    for (l, layer) in sharded.layers.iter().enumerate() {
        for (dst, shard) in layer.workers.iter().enumerate() {
            for cb in &shard.cross {
                let values = cb.omega.len() as u64;
                comm.records.push(CommRecord { layer: l, src: cb.src, dst, values, bytes: values * WIRE_ELEMENT_BYTES });
            }
        }
        multiplies.push((0..sharded.workers).map(|w| layer.multiplies(w)).collect());
        let step = |w: usize| worker_step(layer, &layer.workers[w], w, &local, k);
        local = match mode {
            ExecMode::Sequential => (0..sharded.workers).map(step).collect(),
            ExecMode::Parallel => (0..sharded.workers).into_par_iter().map(step).collect(),
        };
    }
    Ok(DistOutput { outputs: local, comm, multiplies })
}

fn worker_step(layer: &ShardedLayer, shard: &WorkerShard, w: usize, inputs: &[Block], k: usize) -> Block {
    let o = shard.diag.cols;
    let x = &inputs[w];
    let mut out = vec![0.0; o * k];
    for c in 0..o {
        for s in 0..k {
            let mut acc = shard.bias[c];
            for r in 0..shard.diag.rows {
                acc += shard.diag.get(r, c) * x.get(r, s);
            }
            for cb in &shard.cross {
                let src = &inputs[cb.src];
                for (t, &r) in cb.omega.iter().enumerate() {
                    acc += cb.weights.get(t, c) * src.get(r, s);
                }
            }
            out[c * k + s] = layer.activation.apply(acc);
        }
    }
    Block { rows: o, cols: k, data: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DenseLayer;

    fn single(w: Vec<Vec<f64>>, spec_counts: Vec<Vec<usize>>) -> (SequentialModel, PartitionSpec) {
        let cols = w[0].len();
        let layer = DenseLayer::new(
            Tensor::from_rows(&w).unwrap(),
            Tensor::vector((0..cols).map(|c| c as f64 * 0.1).collect()).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let workers = spec_counts[0].len();
        (SequentialModel::dense(vec![layer]).unwrap(), PartitionSpec::new(workers, spec_counts).unwrap())
    }

    #[test]
    fn block_diagonal_has_no_omega() {
        let (m, spec) = single(
            vec![vec![1.0, 2.0, 0.0], vec![3.0, 4.0, 0.0], vec![0.0, 0.0, 5.0]],
            vec![vec![2, 1], vec![2, 1]],
        );
        let sh = shard_model(&m, &spec).unwrap();
        assert!(sh.layers[0].workers.iter().all(|w| w.cross.iter().all(|c| c.omega.is_empty())));
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let out = distributed_forward(&sh, &x, ExecMode::Sequential).unwrap();
        assert_eq!(out.comm.total_values(), 0);
        assert_eq!(out.concat().unwrap(), m.output(&x).unwrap());
    }

    #[test]
    fn single_cross_nonzero() {
        let (m, spec) = single(
            vec![vec![1.0, 0.0], vec![0.5, 1.0]],
            vec![vec![1, 1], vec![1, 1]],
        );
        let sh = shard_model(&m, &spec).unwrap();
        let omegas: Vec<(usize, usize, Vec<usize>)> = sh.layers[0]
            .workers
            .iter()
            .enumerate()
            .flat_map(|(k, w)| w.cross.iter().map(move |c| (c.src, k, c.omega.clone())))
            .filter(|(_, _, o)| !o.is_empty())
            .collect();
        assert_eq!(omegas, vec![(1, 0, vec![0])]);
        assert_eq!(sh.layers[0].reassemble(), m.dense_layers().unwrap()[0].weight);
    }

    #[test]
    fn comm_log_csv() {
        let (m, spec) = single(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![vec![1, 1], vec![1, 1]]);
        let sh = shard_model(&m, &spec).unwrap();
        let x = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let out = distributed_forward(&sh, &x, ExecMode::Parallel).unwrap();
        let mut buf = Vec::new();
        out.comm.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "layer,src,dst,values,bytes\n0,1,0,1,4\n0,0,1,1,4\n");
        assert_eq!(out.multiplies, vec![vec![2, 2]]);
    }

    #[test]
    fn partition_mismatch() {
        let (m, spec) = single(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![vec![1, 1], vec![1, 1]]);
        let sh = shard_model(&m, &spec).unwrap();
        assert!(matches!(
            distributed_forward(&sh, &Tensor::zeros(vec![3, 1]), ExecMode::Sequential),
            Err(Error::Partition(_))
        ));
        let bad = PartitionSpec::new(2, vec![vec![2, 1], vec![1, 1]]).unwrap();
        assert!(shard_model(&m, &bad).is_err());
    }
}
