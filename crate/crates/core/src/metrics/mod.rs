//! Classification metrics: confusion tallies, accuracy, precision, recall,
//! F1, and clipped log loss.

mod history;

pub use history::{emit_history, EpochRecord, TrainingHistory, HISTORY_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clipped to `[EPS, 1 - EPS]` before taking logs.
pub const LOG_LOSS_EPS: f64 = 1e-15;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic N×M matrix of class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "probability data vs rows*cols",
                left: data.len(),
                right: rows * cols,
            });
        }
        if cols == 0 {
            return Err(Error::InvalidArgument("probability matrix needs at least one column".into()));
        }
        for (i, row) in data.chunks_exact(cols).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has a probability outside [0,1]: {row:?}"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged probability rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Binary matrix `[1 - p, p]` from positive-class probabilities.
    pub fn from_positive(p: &[f64]) -> Result<Self> {
        Self::new(p.len(), 2, p.iter().flat_map(|&v| [1.0 - v, v]).collect())
    }

    pub fn one_hot(labels: &[usize], cols: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * cols];
        for (i, &y) in labels.iter().enumerate() {
            if y >= cols {
                return Err(Error::InvalidArgument(format!("label {y} outside 0..{cols}")));
            }
            data[i * cols + y] = 1.0;
        }
        Self::new(labels.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Index of the largest entry of row `i`; the lowest index wins ties.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn concat(parts: &[ProbabilityMatrix]) -> Result<Self> {
        let cols = parts.first().map_or(2, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::InvalidArgument("column count differs between batches".into()));
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Self::new(data.len() / cols, cols, data)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

/// Tallies binary outcomes with class 1 positive; `p[i][1] >= threshold`
/// predicts positive.
pub fn confusion(labels: &[usize], p: &ProbabilityMatrix, threshold: f64) -> Result<ConfusionCounts> {
    if labels.len() != p.rows() {
        return Err(Error::LengthMismatch {
            what: "labels vs probability rows",
            left: labels.len(),
            right: p.rows(),
        });
    }
    if p.cols() != 2 {
        return Err(Error::InvalidArgument(format!(
            "confusion needs a binary task, got {} classes",
            p.cols()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (i, &y) in labels.iter().enumerate() {
        c.add(y == 1, p.get(i, 1) >= threshold);
    }
    Ok(c)
}

fn require_nonempty(c: &ConfusionCounts) -> Result<()> {
    if c.total() == 0 {
        Err(Error::InvalidArgument("confusion counts are empty".into()))
    } else {
        Ok(())
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    require_nonempty(c)?;
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// `tp / (tp + fp)`, or 0 when nothing was predicted positive.
pub fn precision(c: &ConfusionCounts) -> Result<f64> {
    require_nonempty(c)?;
    Ok(if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    })
}

/// `tp / (tp + fn)`, or 0 when there are no positives.
pub fn recall(c: &ConfusionCounts) -> Result<f64> {
    require_nonempty(c)?;
    Ok(if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    })
}

/// Harmonic mean of precision and recall; 0 when `tp == 0`.
pub fn f1(c: &ConfusionCounts) -> Result<f64> {
    let (p, r) = (precision(c)?, recall(c)?);
    Ok(if c.tp == 0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// `-(1/N) Σ_i Σ_j y_ij log(clip(p_ij, eps, 1 - eps))`.
pub fn log_loss(y: &ProbabilityMatrix, p: &ProbabilityMatrix, eps: f64) -> Result<f64> {
    if y.rows() != p.rows() || y.cols() != p.cols() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: targets {}x{}, predictions {}x{}",
            y.rows(),
            y.cols(),
            p.rows(),
            p.cols()
        )));
    }
    if y.rows() == 0 {
        return Err(Error::InvalidArgument("log loss of an empty batch".into()));
    }
    let total: f64 = y
        .data
        .iter()
        .zip(&p.data)
        .filter(|(&t, _)| t != 0.0)
        .map(|(&t, &q)| t * q.clamp(eps, 1.0 - eps).ln())
        .sum();
    Ok(-total / y.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub logloss: f64,
}

impl MetricReport {
    pub fn compute(labels: &[usize], p: &ProbabilityMatrix) -> Result<Self> {
        let c = confusion(labels, p, DEFAULT_THRESHOLD)?;
        Ok(Self {
            accuracy: accuracy(&c)?,
            precision: precision(&c)?,
            recall: recall(&c)?,
            f1: f1(&c)?,
            logloss: log_loss(&ProbabilityMatrix::one_hot(labels, p.cols())?, p, LOG_LOSS_EPS)?,
        })
    }
}
