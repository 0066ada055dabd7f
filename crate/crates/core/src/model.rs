//! Layered models and the reference forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] =
        [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Whether `|f(u) - f(v)| <= |u - v|` holds for all inputs.
    ///
    /// Sigmoid is 1/4-Lipschitz, the others are exactly 1-Lipschitz.
    pub fn is_one_lipschitz(self) -> bool {
        match self {
            Activation::Identity | Activation::Relu | Activation::Tanh | Activation::Sigmoid => {
                true
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownActivation(s.to_string()))
    }
}

/// Fully connected layer. `weight` has shape `(in, out)`; column `i` holds the
/// fan-in of output neuron `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::Shape(format!("dense weight must be 2-D, got {:?}", weight.shape())));
        }
        if bias.shape() != [weight.cols()] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {} outputs",
                bias.shape(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Pre-activations `W^T x + b` for a batch `x` of shape `(in, K)`.
    pub fn affine(&self, x: &Tensor) -> Tensor {
        let (n_in, n_out, k) = (self.in_dim(), self.out_dim(), x.cols());
        let w = self.weight.data();
        let xs = x.data();
        let mut out = vec![0.0; n_out * k];
        for (o, row) in out.chunks_mut(k).enumerate() {
            row.fill(self.bias.data()[o]);
            for r in 0..n_in {
                let wv = w[r * n_out + o];
                if wv == 0.0 {
                    continue;
                }
                for (acc, xv) in row.iter_mut().zip(&xs[r * k..(r + 1) * k]) {
                    *acc += wv * xv;
                }
            }
        }
        Tensor::new(vec![n_out, k], out).expect("finite affine output")
    }
}

/// Convolution kernel of shape `(z_0, .., z_{d-1}, c_in, c_out)`.
///
/// Only used for channel reassignment; there is no convolution forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn new(kernel: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if kernel.rank() < 3 {
            return Err(Error::Shape(format!(
                "conv kernel needs at least one spatial axis plus channels, got {:?}",
                kernel.shape()
            )));
        }
        let c_out = *kernel.shape().last().unwrap();
        if bias.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {c_out} output channels",
                bias.shape()
            )));
        }
        Ok(Self { kernel, bias, activation })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[self.kernel.rank() - 2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[self.kernel.rank() - 1]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.kernel.shape()[..self.kernel.rank() - 2]
    }

    pub fn spatial_len(&self) -> usize {
        self.spatial_shape().iter().product()
    }

    /// Flat kernel index of spatial offset `s`, input channel `l`, output channel `k`.
    #[inline]
    pub fn index(&self, s: usize, l: usize, k: usize) -> usize {
        (s * self.in_channels() + l) * self.out_channels() + k
    }

    /// Squared Frobenius norm of the filter joining input `l` to output `k`.
    pub fn filter_energy(&self, l: usize, k: usize) -> f64 {
        let d = self.kernel.data();
        (0..self.spatial_len()).map(|s| d[self.index(s, l, k)].powi(2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.in_dim(),
            Layer::Conv(c) => c.in_channels(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.out_dim(),
            Layer::Conv(c) => c.out_channels(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(d) => d.activation,
            Layer::Conv(c) => c.activation,
        }
    }

    pub fn as_dense(&self) -> Option<&DenseLayer> {
        match self {
            Layer::Dense(d) => Some(d),
            Layer::Conv(_) => None,
        }
    }
}

/// Ordered stack of layers whose widths chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialModel {
    layers: Vec<Layer>,
}

/// Signals of one layer for a batch: `pre = W^T x + b`, `post = act(pre)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub pre: Tensor,
    pub post: Tensor,
}

impl SequentialModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::LayerDimension {
                    layer: l + 1,
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn dense(layers: Vec<DenseLayer>) -> Result<Self> {
        Self::new(layers.into_iter().map(Layer::Dense).collect())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Widths at every layer boundary, input first (`L + 1` entries).
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    /// Dense layers in order, or the index of the first convolutional layer.
    pub fn dense_layers(&self) -> Result<Vec<&DenseLayer>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| layer.as_dense().ok_or(Error::UnsupportedLayer { layer: l }))
            .collect()
    }

    /// Runs the batch `x` (shape `(in, K)`, one sample per column) through
    /// every layer and returns the per-layer signals.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<LayerTrace>> {
        let dense = self.dense_layers()?;
        if x.rank() != 2 {
            return Err(Error::Shape(format!("input batch must be 2-D, got {:?}", x.shape())));
        }
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(dense.len());
        for (l, layer) in dense.iter().enumerate() {
            let input = traces.last().map_or(x, |t| &t.post);
            if input.rows() != layer.in_dim() {
                return Err(Error::LayerDimension {
                    layer: l,
                    expected: layer.in_dim(),
                    found: input.rows(),
                });
            }
            let pre = layer.affine(input);
            let act = layer.activation;
            let post = pre.map(|v| act.apply(v));
            traces.push(LayerTrace { pre, post });
        }
        Ok(traces)
    }

    /// Final-layer activations for the batch.
    pub fn output(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.pop().expect("nonempty model").post)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(rows: &[Vec<f64>], bias: Vec<f64>, act: Activation) -> DenseLayer {
        DenseLayer::new(Tensor::from_rows(rows).unwrap(), Tensor::vector(bias).unwrap(), act)
            .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = SequentialModel::dense(vec![layer(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        )])
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let t = m.forward(&x).unwrap();
        assert_eq!(t[0].pre.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negative() {
        let m = SequentialModel::dense(vec![layer(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 1.0],
            Activation::Relu,
        )])
        .unwrap();
        let x = Tensor::from_rows(&[vec![-3.0], vec![2.0]]).unwrap();
        assert_eq!(m.output(&x).unwrap().data(), &[0.0, 3.0]);
    }

    // Independent triple-loop oracle over the (in, out) weight layout.
    fn oracle_forward(layers: &[(Vec<Vec<f64>>, Vec<f64>, Activation)], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut cur: Vec<Vec<f64>> = x.to_vec();
        for (w, b, act) in layers {
            let (n_in, n_out, k) = (w.len(), w[0].len(), cur[0].len());
            let mut next = vec![vec![0.0; k]; n_out];
            for o in 0..n_out {
                for s in 0..k {
                    let mut acc = b[o];
                    for r in 0..n_in {
                        acc += w[r][o] * cur[r][s];
                    }
                    next[o][s] = act.apply(acc);
                }
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn random_model_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let widths = [4, 6, 5, 3];
        let acts = [Activation::Relu, Activation::Tanh, Activation::Sigmoid];
        let mut raw = Vec::new();
        for l in 0..3 {
            let w: Vec<Vec<f64>> = (0..widths[l])
                .map(|_| (0..widths[l + 1]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let b: Vec<f64> = (0..widths[l + 1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            raw.push((w, b, acts[l]));
        }
        let model = SequentialModel::dense(
            raw.iter().map(|(w, b, a)| layer(w, b.clone(), *a)).collect(),
        )
        .unwrap();
        let x: Vec<Vec<f64>> =
            (0..4).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let got = model.output(&Tensor::from_rows(&x).unwrap()).unwrap();
        let want = Tensor::from_rows(&oracle_forward(&raw, &x)).unwrap();
        assert!(crate::tensor::max_relative_error(&got, &want) <= 1e-12);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let a = layer(&[vec![1.0, 0.0]], vec![0.0, 0.0], Activation::Identity);
        let b = layer(&[vec![1.0], vec![1.0], vec![1.0]], vec![0.0], Activation::Identity);
        assert!(matches!(
            SequentialModel::dense(vec![a.clone(), b]),
            Err(Error::LayerDimension { layer: 1, expected: 2, found: 3 })
        ));
        let m = SequentialModel::dense(vec![a]).unwrap();
        let x = Tensor::zeros(vec![3, 1]);
        assert!(matches!(m.forward(&x), Err(Error::LayerDimension { layer: 0, .. })));
    }

    #[test]
    fn activations_are_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in Activation::ALL {
            assert!(act.is_one_lipschitz());
            for _ in 0..1000 {
                let (u, v): (f64, f64) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                assert!((act.apply(u) - act.apply(v)).abs() <= (u - v).abs() + 1e-15);
            }
        }
        assert!(matches!(Activation::parse("gelu"), Err(Error::UnknownActivation(_))));
    }
}
