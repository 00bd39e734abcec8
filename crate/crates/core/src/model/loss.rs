use crate::error::{Error, Result};
use crate::metrics::LOG_LOSS_EPS;
use crate::sampling::ClassWeights;

/// Probability clip used by [`weighted_bce`]; identical to the log-loss clip
/// so unit weights reproduce binary log loss exactly.
pub const BCE_EPS: f64 = LOG_LOSS_EPS;

/// Log of the probability assigned to the true class, clipped.
#[inline]
pub(crate) fn true_class_log(p: f64, y: u8) -> f64 {
    let q = if y == 1 { p } else { 1.0 - p };
    q.clamp(BCE_EPS, 1.0 - BCE_EPS).ln()
}

/// True when clipping is active for this sample, which zeroes its gradient.
#[inline]
pub(crate) fn is_clipped(p: f64, y: u8) -> bool {
    let q = if y == 1 { p } else { 1.0 - p };
    !(BCE_EPS..=1.0 - BCE_EPS).contains(&q)
}

/// `-(1/N) Σ_i w_{y_i} [y_i log p_i + (1 - y_i) log(1 - p_i)]` with
/// probabilities clipped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn weighted_bce(p: &[f64], y: &[u8], w: &ClassWeights) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs labels",
            left: p.len(),
            right: y.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("loss of an empty batch".into()));
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("label {bad} is not binary")));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| w.get(yi as usize) * true_class_log(pi, yi))
        .sum();
    Ok(-total / p.len() as f64)
}
