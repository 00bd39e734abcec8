//! Inference for externally trained networks stored as ONNX graphs.
//!
//! A model `net.onnx` is described by a sidecar `net.onnx.json`:
//!
//! ```json
//! {
//!   "input": {"height": 299, "width": 299, "channels": 3, "layout": "nhwc",
//!             "mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5]},
//!   "output": {"classes": ["Normal", "ALL"], "kind": "logits"}
//! }
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::Classifier;
use crate::error::{Error, Result};
use crate::metrics::ProbabilityMatrix;
use crate::tensor::{ImageTensor, CHANNELS, MODEL_SIDE};

/// Operators accepted in the graph. Covers typical CNN classifier heads.
pub const SUPPORTED_OPERATORS: &[&str] = &[
    "Add",
    "AveragePool",
    "BatchNormalization",
    "Clip",
    "Concat",
    "Constant",
    "Conv",
    "Div",
    "Dropout",
    "Flatten",
    "Gemm",
    "GlobalAveragePool",
    "GlobalMaxPool",
    "Identity",
    "MatMul",
    "MaxPool",
    "Mul",
    "Pad",
    "Relu",
    "Reshape",
    "Sigmoid",
    "Softmax",
    "Squeeze",
    "Sub",
    "Transpose",
    "Unsqueeze",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputLayout {
    Nhwc,
    Nchw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub layout: InputLayout,
    /// Per-channel `(x - mean) / std`, applied to values in `[0, 1]`.
    #[serde(default = "zeros3")]
    pub mean: [f32; 3],
    #[serde(default = "ones3")]
    pub std: [f32; 3],
}

fn zeros3() -> [f32; 3] {
    [0.0; 3]
}

fn ones3() -> [f32; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Logits,
    Probabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Class names in output order.
    pub classes: Vec<String>,
    pub kind: OutputKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeModelHandle {
    #[serde(skip)]
    pub path: PathBuf,
    pub input: InputSpec,
    pub output: OutputSpec,
}

impl InterchangeModelHandle {
    pub fn sidecar_path(model: &Path) -> PathBuf {
        let mut s = model.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Reads the sidecar next to `model`.
    pub fn open(model: &Path) -> Result<Self> {
        let sidecar = Self::sidecar_path(model);
        let text = std::fs::read_to_string(&sidecar)
            .map_err(|e| Error::Model(format!("cannot read {}: {e}", sidecar.display())))?;
        let mut h: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Model(format!("invalid sidecar {}: {e}", sidecar.display())))?;
        h.path = model.to_path_buf();
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.input;
        if (i.height, i.width, i.channels) != (MODEL_SIDE, MODEL_SIDE, CHANNELS) {
            return Err(Error::Model(format!(
                "declared input {}x{}x{} is not {MODEL_SIDE}x{MODEL_SIDE}x{CHANNELS}",
                i.height, i.width, i.channels
            )));
        }
        if i.std.iter().any(|&s| s == 0.0 || !s.is_finite()) || i.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Model("normalization must be finite with non-zero std".into()));
        }
        if self.output.classes.len() < 2 {
            return Err(Error::Model("output must declare at least two classes".into()));
        }
        Ok(())
    }
}

pub struct InterchangeClassifier {
    handle: InterchangeModelHandle,
    plan: Arc<TypedRunnableModel>,
}

impl std::fmt::Debug for InterchangeClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InterchangeClassifier")
            .field("handle", &self.handle)
            .finish_non_exhaustive()
    }
}

fn model_err(e: impl std::fmt::Display) -> Error {
    Error::Model(e.to_string())
}

pub fn load_interchange(handle: &InterchangeModelHandle) -> Result<InterchangeClassifier> {
    handle.validate()?;
    if !handle.path.is_file() {
        return Err(Error::Model(format!("model file {} not found", handle.path.display())));
    }
    let onnx = tract_onnx::onnx();
    let proto = onnx.proto_model_for_path(&handle.path).map_err(model_err)?;
    if let Some(graph) = &proto.graph {
        for node in &graph.node {
            if !SUPPORTED_OPERATORS.contains(&node.op_type.as_str()) {
                return Err(Error::UnsupportedOperator(node.op_type.clone()));
            }
        }
    }
    let i = &handle.input;
    let shape = match i.layout {
        InputLayout::Nhwc => [1, i.height, i.width, i.channels],
        InputLayout::Nchw => [1, i.channels, i.height, i.width],
    };
    let plan = onnx
        .model_for_proto_model(&proto)
        .and_then(|m| m.with_input_fact(0, f32::fact(shape).into()))
        .and_then(|m| m.into_optimized())
        .and_then(|m| m.into_runnable())
        .map_err(model_err)?;
    Ok(InterchangeClassifier {
        handle: handle.clone(),
        plan,
    })
}

impl InterchangeClassifier {
    pub fn handle(&self) -> &InterchangeModelHandle {
        &self.handle
    }

    fn input_tensor(&self, img: &ImageTensor) -> Result<Tensor> {
        let i = &self.handle.input;
        if (img.height(), img.width()) != (i.height, i.width) {
            return Err(Error::Model(format!(
                "image is {}x{}, model expects {}x{}",
                img.height(),
                img.width(),
                i.height,
                i.width
            )));
        }
        let norm = |v: f32, c: usize| (v - i.mean[c]) / i.std[c];
        let (h, w) = (i.height, i.width);
        let t = match i.layout {
            InputLayout::Nhwc => {
                let data: Vec<f32> = img
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| norm(v, k % CHANNELS))
                    .collect();
                tract_ndarray::Array4::from_shape_vec((1, h, w, CHANNELS), data)
            }
            InputLayout::Nchw => {
                let mut data = vec![0.0f32; h * w * CHANNELS];
                for (k, &v) in img.data().iter().enumerate() {
                    let c = k % CHANNELS;
                    data[c * h * w + k / CHANNELS] = norm(v, c);
                }
                tract_ndarray::Array4::from_shape_vec((1, CHANNELS, h, w), data)
            }
        };
        Ok(t.map_err(model_err)?.into())
    }

    fn run_one(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let input = self.input_tensor(img)?;
        let out = self.plan.run(tvec!(input.into())).map_err(model_err)?;
        let first = out
            .first()
            .ok_or_else(|| Error::Model("model produced no output".into()))?;
        let view = first.to_plain_array_view::<f32>().map_err(model_err)?;
        let raw: Vec<f64> = view.iter().map(|&v| v as f64).collect();
        let classes = self.handle.output.classes.len();
        if raw.len() != classes {
            return Err(Error::Model(format!(
                "model produced {} values, sidecar declares {classes} classes",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("model produced non-finite output".into()));
        }
        Ok(match self.handle.output.kind {
            OutputKind::Logits => softmax(&raw),
            OutputKind::Probabilities => renormalize(&raw)?,
        })
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn renormalize(p: &[f64]) -> Result<Vec<f64>> {
    if p.iter().any(|&v| v < -1e-6) {
        return Err(Error::Model("declared probabilities contain negative values".into()));
    }
    let clipped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    if s <= 0.0 {
        return Err(Error::Model("declared probabilities sum to zero".into()));
    }
    Ok(clipped.iter().map(|v| (v / s).min(1.0)).collect())
}

impl Classifier for InterchangeClassifier {
    fn n_classes(&self) -> usize {
        self.handle.output.classes.len()
    }

    fn class_names(&self) -> Vec<String> {
        self.handle.output.classes.clone()
    }

    fn predict_proba(&self, batch: &[ImageTensor]) -> Result<ProbabilityMatrix> {
        let rows = batch
            .par_iter()
            .map(|img| self.run_one(img))
            .collect::<Result<Vec<_>>>()?;
        let m = ProbabilityMatrix::from_rows(&rows).map_err(|e| Error::Model(e.to_string()))?;
        Ok(m)
    }
}
