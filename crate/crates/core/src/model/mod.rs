//! Black-box classifier contract, class-weighted BCE, the trainable
//! reference network, and the interchange-format inference adapter.

#[cfg(feature = "interchange")]
mod interchange;
mod loss;
mod reference;

#[cfg(feature = "interchange")]
pub use interchange::{
    load_interchange, InputLayout, InputSpec, InterchangeClassifier, InterchangeModelHandle,
    OutputKind, OutputSpec, SUPPORTED_OPERATORS,
};
pub use loss::{weighted_bce, BCE_EPS};
pub use reference::{
    grad_check, grad_check_with, train_reference, Adam, Dataset, Gradients, Parameters,
    ParametersFile, ReferenceNet, ReferenceNetConfig, TrainOutcome, PARAMETERS_FORMAT,
};

use crate::error::Result;
use crate::metrics::ProbabilityMatrix;
use crate::tensor::ImageTensor;

/// Class names in label order: 0 = normal, 1 = ALL.
pub const CLASS_NAMES: [&str; 2] = ["Normal", "ALL"];

/// Any model that maps a batch of H×W×3 tensors to class probabilities.
///
/// Implementations must return one row per input, rows summing to 1, and the
/// same output for the same input. They are shared across explanation
/// workers, hence `Send + Sync`.
pub trait Classifier: Send + Sync {
    fn n_classes(&self) -> usize;

    fn class_names(&self) -> Vec<String> {
        if self.n_classes() == CLASS_NAMES.len() {
            CLASS_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.n_classes()).map(|i| format!("class_{i}")).collect()
        }
    }

    fn predict_proba(&self, batch: &[ImageTensor]) -> Result<ProbabilityMatrix>;
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }

    fn class_names(&self) -> Vec<String> {
        (**self).class_names()
    }

    fn predict_proba(&self, batch: &[ImageTensor]) -> Result<ProbabilityMatrix> {
        (**self).predict_proba(batch)
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }

    fn class_names(&self) -> Vec<String> {
        (**self).class_names()
    }

    fn predict_proba(&self, batch: &[ImageTensor]) -> Result<ProbabilityMatrix> {
        (**self).predict_proba(batch)
    }
}
