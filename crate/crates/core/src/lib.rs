//! Blood-cell image classification tooling: BMP ingest, augmentation,
//! stratified splitting, metrics, a small reference classifier, ONNX
//! inference, and LIME explanations over SLIC superpixels.

pub mod augment;
pub mod error;
pub mod explain;
pub mod imagestore;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use model::Classifier;
pub use rng::RandomStream;
pub use tensor::ImageTensor;
