//! LIME for image classifiers over SLIC superpixels.

mod lime;
mod render;
mod slic;
mod surrogate;

pub use lime::{kernel_weights, perturb, sample_masks, segment_means, MaskMatrix, Perturber, DEFAULT_KERNEL_WIDTH};
pub use render::{
    encode_png, render_boundaries, render_heatmap, render_segments, segment_color, write_png, DEFAULT_TOP_K,
};
pub use slic::{rgb_to_lab, slic_segment, SegmentMap, SlicParams};
pub use surrogate::{fit_surrogate, SurrogateFit, DEFAULT_RIDGE_ALPHA};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ProbabilityMatrix;
use crate::model::Classifier;
use crate::rng::RandomStream;
use crate::tensor::ImageTensor;

pub const SEGMENTATION: &str = "slic";
pub const DEFAULT_SAMPLES: usize = 1000;
/// Perturbed images sent to the classifier per call.
pub const PREDICT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainParams {
    pub segmentation: String,
    pub slic: SlicParams,
    pub n_samples: usize,
    pub kernel_width: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ExplainParams {
    fn default() -> Self {
        Self {
            segmentation: SEGMENTATION.into(),
            slic: SlicParams::default(),
            n_samples: DEFAULT_SAMPLES,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            alpha: DEFAULT_RIDGE_ALPHA,
            seed: 0,
        }
    }
}

impl ExplainParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentWeight {
    pub segment: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target_label: usize,
    pub label_name: String,
    /// Probability of `target_label` for the unperturbed image.
    pub confidence: f64,
    pub probabilities: Vec<f64>,
    pub n_segments: usize,
    /// Descending by weight, ties by ascending segment id.
    pub segment_weights: Vec<SegmentWeight>,
    pub intercept: f64,
    pub r2: f64,
    pub seed: u64,
    pub params: ExplainParams,
}

impl Explanation {
    pub fn weight_of(&self, segment: usize) -> Option<f64> {
        self.segment_weights
            .iter()
            .find(|w| w.segment == segment)
            .map(|w| w.weight)
    }

    pub fn confidence_percent(&self) -> f64 {
        self.confidence * 100.0
    }
}

/// Sorts by descending coefficient with ascending segment id on ties.
pub fn rank_segments(coefficients: &[f64]) -> Vec<SegmentWeight> {
    let mut out: Vec<SegmentWeight> = coefficients
        .iter()
        .enumerate()
        .map(|(segment, &weight)| SegmentWeight { segment, weight })
        .collect();
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.segment.cmp(&b.segment)));
    out
}

/// Classifies every masked variant of `image`, in mask order.
///
/// Batches of [`PREDICT_BATCH`] run concurrently; results are reassembled by
/// batch index so the output never depends on scheduling.
pub fn predict_perturbations<C: Classifier + ?Sized>(
    perturber: &Perturber<'_>,
    masks: &MaskMatrix,
    classifier: &C,
) -> Result<ProbabilityMatrix> {
    let starts: Vec<usize> = (0..masks.rows()).step_by(PREDICT_BATCH).collect();
    let parts = starts
        .par_iter()
        .map(|&start| {
            let end = (start + PREDICT_BATCH).min(masks.rows());
            let batch = (start..end)
                .map(|i| perturber.apply(masks.row(i)))
                .collect::<Result<Vec<_>>>()?;
            let p = classifier.predict_proba(&batch)?;
            if p.rows() != batch.len() {
                return Err(Error::Model(format!(
                    "classifier returned {} rows for a batch of {}",
                    p.rows(),
                    batch.len()
                )));
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    ProbabilityMatrix::concat(&parts)
}

/// Explains the classifier's top prediction for `image`.
pub fn explain<C: Classifier + ?Sized>(
    image: &ImageTensor,
    classifier: &C,
    params: &ExplainParams,
) -> Result<Explanation> {
    let seg = slic_segment(image, &params.slic)?;
    explain_with_segments(image, &seg, classifier, params)
}

/// As [`explain`], with a precomputed segmentation.
pub fn explain_with_segments<C: Classifier + ?Sized>(
    image: &ImageTensor,
    seg: &SegmentMap,
    classifier: &C,
    params: &ExplainParams,
) -> Result<Explanation> {
    if params.segmentation != SEGMENTATION {
        return Err(Error::InvalidArgument(format!(
            "unknown segmentation `{}`",
            params.segmentation
        )));
    }
    let mut rng = RandomStream::new(params.seed);
    let masks = sample_masks(seg.n_segments(), params.n_samples, &mut rng)?;
    let perturber = Perturber::new(image, seg)?;
    let responses = predict_perturbations(&perturber, &masks, classifier)?;

    let target = responses.argmax(0);
    let weights = kernel_weights(&masks, params.kernel_width)?;
    let fit = fit_surrogate(&masks, &responses.column(target), &weights, params.alpha)?;
    let names = classifier.class_names();

    Ok(Explanation {
        target_label: target,
        label_name: names.get(target).cloned().unwrap_or_else(|| target.to_string()),
        confidence: responses.get(0, target),
        probabilities: responses.row(0).to_vec(),
        n_segments: seg.n_segments(),
        segment_weights: rank_segments(&fit.coefficients),
        intercept: fit.intercept,
        r2: fit.r2,
        seed: params.seed,
        params: params.clone(),
    })
}
