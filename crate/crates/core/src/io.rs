//! RPM v1 model directories: `manifest.json` plus one raw little-endian f32
//! file per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, ConvLayer, DenseLayer, Layer, SequentialModel};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u64,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: LayerKind,
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: String,
    pub weight: String,
    pub bias: String,
    pub dtype: String,
    pub layout: String,
    /// Shape of the weight (dense) or kernel (conv) tensor.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv,
}

/// Reads a model directory.
pub fn load_model(dir: impl AsRef<Path>) -> Result<SequentialModel> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(manifest_path.clone())
        } else {
            Error::io(&manifest_path, e)
        }
    })?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Manifest("missing integer format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::Manifest(e.to_string()))?;

    let layers = manifest
        .layers
        .iter()
        .enumerate()
        .map(|(l, entry)| read_layer(dir, l, entry))
        .collect::<Result<Vec<_>>>()?;
    SequentialModel::new(layers)
}

fn read_layer(dir: &Path, l: usize, entry: &LayerEntry) -> Result<Layer> {
    if entry.dtype != "f32" {
        return Err(Error::Manifest(format!("layer {l}: unsupported dtype {:?}", entry.dtype)));
    }
    if entry.layout != "row-major" {
        return Err(Error::Manifest(format!("layer {l}: unsupported layout {:?}", entry.layout)));
    }
    let activation = Activation::parse(&entry.activation)?;
    let weight = read_tensor(&dir.join(&entry.weight), entry.shape.clone())?;
    let bias = read_tensor(&dir.join(&entry.bias), vec![entry.out_dim])?;
    let layer = match entry.kind {
        LayerKind::Dense => Layer::Dense(DenseLayer::new(weight, bias, activation)?),
        LayerKind::Conv => Layer::Conv(ConvLayer::new(weight, bias, activation)?),
    };
    if layer.in_dim() != entry.in_dim || layer.out_dim() != entry.out_dim {
        return Err(Error::Manifest(format!(
            "layer {l}: declared {}x{} but weight shape {:?}",
            entry.in_dim, entry.out_dim, entry.shape
        )));
    }
    Ok(layer)
}

/// Reads a headerless little-endian f32 file of the given shape.
pub fn read_tensor(path: &Path, shape: Vec<usize>) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let expected = 4 * shape.iter().product::<usize>() as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::ByteCount {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let bytes: Vec<u8> = tensor.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a model directory, creating it if needed. Values are narrowed to f32.
pub fn save_model(model: &SequentialModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(model.num_layers());
    for (l, layer) in model.layers().iter().enumerate() {
        let (kind, weight, bias) = match layer {
            Layer::Dense(d) => (LayerKind::Dense, &d.weight, &d.bias),
            Layer::Conv(c) => (LayerKind::Conv, &c.kernel, &c.bias),
        };
        let weight_file = format!("layer{l}.weight.bin");
        let bias_file = format!("layer{l}.bias.bin");
        write_tensor(&dir.join(&weight_file), weight)?;
        write_tensor(&dir.join(&bias_file), bias)?;
        entries.push(LayerEntry {
            kind,
            in_dim: layer.in_dim(),
            out_dim: layer.out_dim(),
            activation: layer.activation().name().to_string(),
            weight: weight_file,
            bias: bias_file,
            dtype: "f32".into(),
            layout: "row-major".into(),
            shape: weight.shape().to_vec(),
        });
    }
    let manifest = Manifest { format_version: FORMAT_VERSION, layers: entries };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(PathBuf::from(path))
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(serde_json::from_str(&text)?)
}
