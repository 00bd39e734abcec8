use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HISTORY_COLUMNS: [&str; 7] = [
    "epoch",
    "loss",
    "accuracy",
    "f1",
    "val_loss",
    "val_accuracy",
    "val_f1",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

impl EpochRecord {
    fn series(&self) -> [f64; 6] {
        [
            self.loss,
            self.accuracy,
            self.f1,
            self.val_loss,
            self.val_accuracy,
            self.val_f1,
        ]
    }
}

/// Per-epoch metrics, epochs numbered contiguously from 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the next epoch; `record.epoch` is overwritten with its index.
    pub fn push(&mut self, mut record: EpochRecord) {
        record.epoch = self.records.len() + 1;
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = HISTORY_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.epoch);
            for v in r.series() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> String {
        render_svg(&self.records)
    }
}

/// Writes `history.csv` and `history.svg` into `out_dir`.
pub fn emit_history(h: &TrainingHistory, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if h.is_empty() {
        return Err(Error::InvalidArgument("training history is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join("history.csv");
    let svg = out_dir.join("history.svg");
    fs::write(&csv, h.to_csv()).map_err(|e| Error::io(&csv, e))?;
    fs::write(&svg, h.to_svg()).map_err(|e| Error::io(&svg, e))?;
    Ok((csv, svg))
}

const SERIES_STYLE: [(&str, &str, &str); 6] = [
    ("loss", "#d62728", ""),
    ("accuracy", "#1f77b4", ""),
    ("f1", "#2ca02c", ""),
    ("val_loss", "#d62728", "6,4"),
    ("val_accuracy", "#1f77b4", "6,4"),
    ("val_f1", "#2ca02c", "6,4"),
];

fn render_svg(records: &[EpochRecord]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 170.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;

    let y_max = records
        .iter()
        .flat_map(|r| r.series())
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let n = records.len();
    let x_of = |i: usize| {
        if n == 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| TOP + plot_h * (1.0 - (v.clamp(0.0, y_max) / y_max));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch (1-{n})</text>"#,
        LEFT + plot_w / 2.0,
        H - 15.0
    );

    for (k, (name, color, dash)) in SERIES_STYLE.iter().enumerate() {
        let points: Vec<String> = records
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", x_of(i), y_of(r.series()[k])))
            .collect();
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let _ = writeln!(
            s,
            r#"<polyline id="{name}" fill="none" stroke="{color}" stroke-width="2"{dash_attr} points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"{dash_attr}/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            lx + 30.0,
            lx + 36.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(epochs: usize) -> TrainingHistory {
        let mut h = TrainingHistory::new();
        for e in 0..epochs {
            let t = e as f64 / epochs as f64;
            h.push(EpochRecord {
                epoch: 0,
                loss: 0.7 - 0.5 * t,
                accuracy: 0.5 + 0.4 * t,
                f1: 0.45 + 0.4 * t,
                val_loss: 0.75 - 0.4 * t,
                val_accuracy: 0.5 + 0.3 * t,
                val_f1: 0.4 + 0.3 * t,
            });
        }
        h
    }

    #[test]
    fn epochs_are_contiguous_from_one() {
        let h = history(4);
        let epochs: Vec<usize> = h.records().iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3, 4]);
    }

    #[test]
    fn single_epoch_csv() {
        let csv = history(1).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "epoch,loss,accuracy,f1,val_loss,val_accuracy,val_f1");
        assert!(lines[1].starts_with("1,0.7,0.5,"));
    }

    #[test]
    fn thirty_five_epochs_emit_six_series() {
        let dir = tempfile::tempdir().unwrap();
        let h = history(35);
        let (csv, svg) = emit_history(&h, dir.path()).unwrap();
        let csv_text = fs::read_to_string(&csv).unwrap();
        assert_eq!(csv_text.lines().count(), 36);
        let svg_text = fs::read_to_string(svg).unwrap();
        assert_eq!(svg_text.matches("<polyline").count(), 6);

        emit_history(&h, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), csv_text);
    }

    #[test]
    fn empty_history_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_history(&TrainingHistory::new(), dir.path()).is_err());
    }
}
