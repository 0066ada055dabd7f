//! Worker partitions, neuron permutations and the cross-worker mask.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenseLayer, SequentialModel};
use crate::tensor::Tensor;

/// Per-boundary neuron counts for `workers` workers. `counts[0]` fixes the
/// input layer, `counts[l]` the outputs of layer `l`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub workers: usize,
    pub counts: Vec<Vec<usize>>,
}

impl PartitionSpec {
    pub fn new(workers: usize, counts: Vec<Vec<usize>>) -> Result<Self> {
        let spec = Self { workers, counts };
        spec.check_shape()?;
        Ok(spec)
    }

    /// Splits every width as evenly as possible, earlier workers taking the remainder.
    pub fn balanced(workers: usize, widths: &[usize]) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Partition("need at least one worker".into()));
        }
        let counts = widths.iter().map(|&w| balanced_counts(w, workers)).collect();
        Self::new(workers, counts)
    }

    fn check_shape(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Partition("need at least one worker".into()));
        }
        if let Some((l, c)) = self.counts.iter().enumerate().find(|(_, c)| c.len() != self.workers) {
            return Err(Error::Partition(format!(
                "boundary {l} lists {} counts for {} workers",
                c.len(),
                self.workers
            )));
        }
        Ok(())
    }

    /// Checks the spec against model widths (one boundary per layer plus input).
    pub fn validate(&self, model: &SequentialModel) -> Result<()> {
        self.validate_widths(&model.widths())
    }

    pub fn validate_widths(&self, widths: &[usize]) -> Result<()> {
        self.check_shape()?;
        if self.counts.len() != widths.len() {
            return Err(Error::Partition(format!(
                "{} boundaries in partition, model has {}",
                self.counts.len(),
                widths.len()
            )));
        }
        for (l, (c, &w)) in self.counts.iter().zip(widths).enumerate() {
            let sum: usize = c.iter().sum();
            if sum != w {
                return Err(Error::Partition(format!(
                    "boundary {l}: counts sum to {sum}, width is {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = crate::io::read_json(path.as_ref())?;
        spec.check_shape()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path.as_ref(), self)
    }
}

pub fn balanced_counts(width: usize, workers: usize) -> Vec<usize> {
    (0..workers).map(|k| width / workers + usize::from(k < width % workers)).collect()
}

/// Worker owning each position when blocks are laid out contiguously.
pub fn owners(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect()
}

/// Start offset of each worker's block, plus the total as the last entry.
pub fn offsets(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &n in counts {
        acc += n;
        out.push(acc);
    }
    out
}

/// A bijection on `0..n`: neuron `i` moves to position `map[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::Permutation(format!("{map:?} is not a bijection")));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// New position of neuron `i`.
    #[inline]
    pub fn apply_index(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// `self` after `first`: neuron `i` goes to `self[first[i]]`.
    pub fn compose(&self, first: &Permutation) -> Self {
        Self { map: first.map.iter().map(|&m| self.map[m]).collect() }
    }

    /// `Pi v`: entry `i` of `v` lands at position `map[i]`.
    pub fn apply_slice<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.map.len());
        let mut out = v.to_vec();
        for (i, &m) in self.map.iter().enumerate() {
            out[m] = v[i];
        }
        out
    }

    /// Permutes the rows of a matrix (`Pi X`).
    pub fn apply_rows(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.map.len());
        let inv = self.inverse();
        Tensor::from_fn(x.rows(), x.cols(), |r, c| x.get(inv.map[r], c))
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

/// Binary `(in, out)` matrix: 0 inside a worker's diagonal block, 1 elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.bits.chunks(self.cols).map(|r| r.iter().map(|&b| u8::from(b)).collect()).collect()
    }
}

pub fn build_mask(in_counts: &[usize], out_counts: &[usize]) -> Result<MaskMatrix> {
    if in_counts.len() != out_counts.len() {
        return Err(Error::Partition(format!(
            "{} input counts vs {} output counts",
            in_counts.len(),
            out_counts.len()
        )));
    }
    let row_owner = owners(in_counts);
    let col_owner = owners(out_counts);
    let bits = row_owner
        .iter()
        .flat_map(|&ro| col_owner.iter().map(move |&co| ro != co))
        .collect();
    Ok(MaskMatrix { rows: row_owner.len(), cols: col_owner.len(), bits })
}

/// `||M . W||_0`: nonzero weights sitting on cross-worker positions.
pub fn cross_edge_count(w: &Tensor, mask: &MaskMatrix) -> Result<usize> {
    if w.rank() != 2 || w.rows() != mask.rows || w.cols() != mask.cols {
        return Err(Error::Shape(format!(
            "weight {:?} vs mask {}x{}",
            w.shape(),
            mask.rows,
            mask.cols
        )));
    }
    Ok(w.data().iter().zip(&mask.bits).filter(|(&v, &m)| m && v != 0.0).count())
}

/// Per-layer cross-edge counts of a dense model under a partition.
pub fn model_cross_edges(model: &SequentialModel, spec: &PartitionSpec) -> Result<Vec<usize>> {
    spec.validate(model)?;
    model
        .dense_layers()?
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let mask = build_mask(&spec.counts[l], &spec.counts[l + 1])?;
            cross_edge_count(&layer.weight, &mask)
        })
        .collect()
}

/// Computes `Pi_prev W Pi^T` and `Pi b` by moving entries; no arithmetic.
pub fn apply_permutation(
    layer: &DenseLayer,
    prev: &Permutation,
    cur: &Permutation,
) -> Result<DenseLayer> {
    if prev.len() != layer.in_dim() || cur.len() != layer.out_dim() {
        return Err(Error::Permutation(format!(
            "sizes {}/{} do not match layer {}x{}",
            prev.len(),
            cur.len(),
            layer.in_dim(),
            layer.out_dim()
        )));
    }
    let weight = permute_matrix(&layer.weight, prev, cur);
    let bias = Tensor::vector(cur.apply_slice(layer.bias.data()))?;
    DenseLayer::new(weight, bias, layer.activation)
}

pub(crate) fn permute_matrix(w: &Tensor, rows: &Permutation, cols: &Permutation) -> Tensor {
    let mut out = w.clone();
    for r in 0..w.rows() {
        let nr = rows.apply_index(r);
        for c in 0..w.cols() {
            out.set(nr, cols.apply_index(c), w.get(r, c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    #[test]
    fn mask_examples() {
        let m = build_mask(&[2, 1], &[1, 2]).unwrap();
        assert_eq!(m.to_rows(), vec![vec![0, 1, 1], vec![0, 1, 1], vec![1, 0, 0]]);
        assert_eq!(build_mask(&[3], &[3]).unwrap().ones(), 0);
        let sym = build_mask(&[2, 2], &[2, 2]).unwrap();
        assert_eq!(
            sym.to_rows(),
            vec![vec![0, 0, 1, 1], vec![0, 0, 1, 1], vec![1, 1, 0, 0], vec![1, 1, 0, 0]]
        );
        assert!(build_mask(&[1, 1], &[2]).is_err());
    }

    #[test]
    fn cross_edges_examples() {
        let m = build_mask(&[2, 1], &[1, 2]).unwrap();
        let ones = Tensor::from_fn(3, 3, |_, _| 1.0);
        assert_eq!(cross_edge_count(&ones, &m).unwrap(), 5);
        let block = Tensor::from_fn(3, 3, |r, c| if m.get(r, c) { 0.0 } else { 2.0 });
        assert_eq!(cross_edge_count(&block, &m).unwrap(), 0);
        assert!(cross_edge_count(&Tensor::zeros(vec![2, 3]), &m).is_err());
    }

    #[test]
    fn permutation_examples() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let layer =
            DenseLayer::new(w, Tensor::vector(vec![5.0, 6.0]).unwrap(), Activation::Relu).unwrap();
        let id = Permutation::identity(2);
        assert_eq!(apply_permutation(&layer, &id, &id).unwrap(), layer);
        let swap = Permutation::new(vec![1, 0]).unwrap();
        let p = apply_permutation(&layer, &id, &swap).unwrap();
        assert_eq!(p.weight.data(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(p.bias.data(), &[6.0, 5.0]);
        let back = apply_permutation(&p, &id.inverse(), &swap.inverse()).unwrap();
        assert_eq!(back, layer);
        assert!(apply_permutation(&layer, &Permutation::identity(3), &id).is_err());
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        let p: Permutation = serde_json::from_str("[2,0,1]").unwrap();
        assert_eq!(p.apply_slice(&['a', 'b', 'c']), vec!['b', 'c', 'a']);
        assert_eq!(p.compose(&p.inverse()), Permutation::identity(3));
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
    }

    #[test]
    fn partition_validation() {
        let spec = PartitionSpec::balanced(3, &[7, 4]).unwrap();
        assert_eq!(spec.counts, vec![vec![3, 2, 2], vec![2, 1, 1]]);
        spec.validate_widths(&[7, 4]).unwrap();
        assert!(spec.validate_widths(&[7, 5]).is_err());
        assert!(spec.validate_widths(&[7]).is_err());
        assert!(PartitionSpec::new(2, vec![vec![1, 2, 3]]).is_err());
        let json: PartitionSpec = serde_json::from_str(r#"{"workers":2,"counts":[[1,1]]}"#).unwrap();
        assert_eq!(json.counts, vec![vec![1, 1]]);
    }
}
