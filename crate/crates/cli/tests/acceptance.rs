//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cellxai::augment::{augment_indexed, flip_horizontal, flip_vertical, transpose, AugmentConfig};
use cellxai::explain::{explain, fit_surrogate, kernel_weights, sample_masks, slic_segment, ExplainParams, MaskMatrix, SlicParams};
use cellxai::metrics::{self, ProbabilityMatrix, LOG_LOSS_EPS};
use cellxai::model::{grad_check, grad_check_with, train_reference, Classifier, Dataset, Parameters, ReferenceNetConfig};
use cellxai::sampling::{compute_class_weights, stratified_kfold, ClassWeights};
use cellxai::{ImageTensor, RandomStream};
use rayon::prelude::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn c1_class_weights() -> Outcome {
    let mut labels = vec![0usize; 3389];
    labels.extend(std::iter::repeat_n(1, 7272));
    let w = compute_class_weights(&labels, 2).map_err(|e| e.to_string())?;
    ensure!(w.0[0] == 1.5728828562997934, "w0 = {}", w.0[0]);
    ensure!(w.0[1] == 0.7330170517051705, "w1 = {}", w.0[1]);
    Ok(format!("{{0: {}, 1: {}}}", w.0[0], w.0[1]))
}

fn c2_metric_oracle() -> Outcome {
    let mut rng = RandomStream::new(0x5eed);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = 1 + rng.below(500);
        let rate = rng.uniform();
        let labels: Vec<usize> = (0..n).map(|_| rng.bernoulli(rate) as usize).collect();
        let p: Vec<f64> = (0..n)
            .map(|_| match rng.below(8) {
                0 => 0.0,
                1 => 1.0,
                2 => 0.5,
                _ => rng.uniform(),
            })
            .collect();
        let (mut tp, mut fp, mut tn, mut fneg) = (0.0, 0.0, 0.0, 0.0);
        let mut ll = 0.0;
        for (&y, &q) in labels.iter().zip(&p) {
            match (y == 1, q >= 0.5) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (false, false) => tn += 1.0,
                (true, false) => fneg += 1.0,
            }
            let t = if y == 1 { q } else { 1.0 - q };
            ll -= t.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS).ln();
        }
        ll /= n as f64;
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let prec = div(tp, tp + fp);
        let rec = div(tp, tp + fneg);
        let want = [
            (tp + tn) / n as f64,
            prec,
            rec,
            div(2.0 * prec * rec, prec + rec),
            ll,
        ];
        let pm = ProbabilityMatrix::from_positive(&p).map_err(|e| e.to_string())?;
        let r = metrics::MetricReport::compute(&labels, &pm).map_err(|e| e.to_string())?;
        let got = [r.accuracy, r.precision, r.recall, r.f1, r.logloss];
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        ensure!(worst < 1e-12, "case {case}: got {got:?}, want {want:?}");
    }
    let half = ProbabilityMatrix::from_positive(&[0.5; 64]).map_err(|e| e.to_string())?;
    let y = ProbabilityMatrix::one_hot(&(0..64).map(|i| i % 2).collect::<Vec<_>>(), 2).map_err(|e| e.to_string())?;
    let l = metrics::log_loss(&y, &half, LOG_LOSS_EPS).map_err(|e| e.to_string())?;
    ensure!((l - std::f64::consts::LN_2).abs() < 1e-12, "log loss at p=0.5 is {l}");
    Ok(format!("1000 instances, max deviation {worst:.1e}; ln2 check ok"))
}

fn c3_stratification() -> Outcome {
    let start = Instant::now();
    let mut rng = RandomStream::new(33);
    let mut done = 0;
    while done < 500 {
        let k = 2 + rng.below(4);
        let n = 2 * k + rng.below(2001 - 2 * k);
        let n_classes = 2 + rng.below(2);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(n_classes)).collect();
        let counts: Vec<usize> = (0..n_classes).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        if counts.iter().any(|&c| c < k) {
            continue;
        }
        let fa = stratified_kfold(&labels, k, rng.next_u64()).map_err(|e| e.to_string())?;
        ensure!(fa.fold_of.len() == n, "assignment length {}", fa.fold_of.len());
        let mut seen = BTreeSet::new();
        let mut per = vec![vec![0usize; n_classes]; k];
        for (i, &f) in fa.fold_of.iter().enumerate() {
            ensure!(f < k, "fold id {f} out of range");
            per[f][labels[i]] += 1;
            seen.insert(i);
        }
        ensure!(seen.len() == n, "folds do not cover all indices");
        for f in 0..k {
            for c in 0..n_classes {
                let (lo, hi) = (counts[c] / k, counts[c].div_ceil(k));
                ensure!(
                    (lo..=hi).contains(&per[f][c]),
                    "fold {f} has {} of class {c} (n_c={}, k={k})",
                    per[f][c],
                    counts[c]
                );
            }
        }
        done += 1;
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok(format!("500 label vectors in {:.2}s", t.as_secs_f64()))
}

fn c4_augmentation() -> Outcome {
    let mut rng = RandomStream::new(4);
    for _ in 0..5 {
        let img = ImageTensor::from_fn(299, 299, |_, _| [0; 3].map(|_| rng.uniform() as f32));
        ensure!(flip_vertical(&flip_vertical(&img)) == img, "vertical flip is not an involution");
        ensure!(flip_horizontal(&flip_horizontal(&img)) == img, "horizontal flip is not an involution");
        ensure!(transpose(&transpose(&img)) == img, "transpose is not an involution");
    }

    let img = ImageTensor::from_fn(299, 299, |y, x| [y as f32 / 298.0, x as f32 / 298.0, 0.5]);
    let flipped = transpose(&img);
    let cfg = AugmentConfig {
        transpose: true,
        ..AugmentConfig::neutral(2024)
    };
    let outcomes: Vec<Option<bool>> = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let out = augment_indexed(&img, i, &cfg);
            if out == flipped {
                Some(true)
            } else if out == img {
                Some(false)
            } else {
                None
            }
        })
        .collect();
    ensure!(outcomes.iter().all(Option::is_some), "neutral pipeline altered pixels");
    let freq = outcomes.iter().filter(|o| **o == Some(true)).count() as f64 / 10_000.0;
    ensure!((freq - 0.25).abs() <= 0.02, "transpose frequency {freq}");

    let full = AugmentConfig {
        seed: 77,
        ..AugmentConfig::default()
    };
    let bad = (0..300u64)
        .into_par_iter()
        .filter(|&i| {
            let mut r = RandomStream::substream(5, i);
            let h = 50 + r.below(300);
            let w = 50 + r.below(300);
            let src = ImageTensor::from_fn(h, w, |_, _| [0; 3].map(|_| r.uniform() as f32));
            let out = augment_indexed(&src, i, &full);
            !(out.is_model_shape() && out.in_unit_range())
        })
        .count();
    ensure!(bad == 0, "{bad} augmented outputs out of shape or range");
    Ok(format!("involutions exact; transpose frequency {freq:.4}; 300 outputs in range"))
}

fn c5_reference_training() -> Outcome {
    let mut rng = RandomStream::new(55);
    let cfg = ReferenceNetConfig {
        input_side: 8,
        hidden_units: 16,
        ..Default::default()
    };
    let mut batch = Dataset::new(cfg.input_dim());
    for i in 0..32 {
        let x: Vec<f32> = (0..cfg.input_dim()).map(|_| rng.uniform() as f32).collect();
        batch.push_features(&x, (i % 3 == 0) as u8).map_err(|e| e.to_string())?;
    }
    let params = Parameters::init(cfg.input_dim(), cfg.hidden_units, &mut rng);
    let w = ClassWeights(vec![1.5728828562997934, 0.7330170517051705]);
    let err = grad_check(&params, &batch, &w, 9);
    ensure!(err < 1e-4, "gradient check error {err}");
    let mutant = grad_check_with(&params, &batch, &w, 9, |p, d, w| {
        let idx: Vec<usize> = (0..d.len()).collect();
        p.loss_and_gradient(d, &idx, w).1.iter().map(|g| 2.0 * g).collect()
    });
    ensure!(mutant > 0.5, "doubled gradient not caught: {mutant}");

    let mut samples = Vec::new();
    for i in 0..200 {
        let label = (i % 2) as u8;
        let (lo, hi) = if label == 1 { (0.72, 1.0) } else { (0.0, 0.28) };
        let img = ImageTensor::from_fn(32, 32, |_, _| [0; 3].map(|_| rng.uniform_in(lo, hi) as f32));
        samples.push((img, label));
    }
    let oracle_ok = samples.iter().all(|(img, y)| (img.mean() > 0.5) == (*y == 1));
    ensure!(oracle_ok, "synthetic set is not separable by its mean");

    let cfg = ReferenceNetConfig {
        epochs: 200,
        seed: 1,
        ..Default::default()
    };
    let data = Dataset::from_images(samples.iter().map(|(i, y)| (i, *y)), cfg.input_side).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let out = pool
        .install(|| train_reference(&data, &data, &cfg, &ClassWeights::uniform(2)))
        .map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let p = out.net.predict_dataset(&data);
    let acc = p.iter().zip(data.labels()).filter(|(&p, &y)| (p >= 0.5) == (y == 1)).count() as f64 / p.len() as f64;
    let first = out.history.records().iter().position(|r| r.accuracy >= 0.99).map(|e| e + 1);
    ensure!(acc >= 0.99, "train accuracy {acc}");
    ensure!(t < Duration::from_secs(60), "training took {t:?}");
    Ok(format!(
        "grad check {err:.1e}, mutant {mutant:.2}; train accuracy {acc:.3} (>=0.99 from epoch {first:?}) in {:.1}s",
        t.as_secs_f64()
    ))
}

fn dense_solve(masks: &MaskMatrix, y: &[f64], w: &[f64], alpha: f64) -> Vec<f64> {
    let (n, s) = (masks.rows(), masks.cols());
    let p = s + 1;
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(masks.row(i).iter().map(|&z| z as f64)).collect() };
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..n {
        let x = row(i);
        for r in 0..p {
            for c in 0..p {
                a[r][c] += w[i] * x[r] * x[c];
            }
            a[r][p] += w[i] * x[r] * y[i];
        }
    }
    for (r, row) in a.iter_mut().enumerate().skip(1) {
        row[r] += alpha;
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|r| a[r][p] / a[r][r]).collect()
}

fn c6_surrogate() -> Outcome {
    let mut rng = RandomStream::new(66);
    let mut worst: f64 = 0.0;
    for case in 0..60 {
        let s = 1 + rng.below(12);
        let n = s + 2 + rng.below(4096 - s - 2);
        let masks = sample_masks(s, n, &mut rng).map_err(|e| e.to_string())?;
        let y: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let w = kernel_weights(&masks, 0.25).map_err(|e| e.to_string())?;
        let alpha = [0.0, 1e-8, 0.1, 1.0, 100.0][case % 5];
        let fit = fit_surrogate(&masks, &y, &w, alpha).map_err(|e| e.to_string())?;
        let oracle = dense_solve(&masks, &y, &w, alpha);
        worst = worst.max((fit.intercept - oracle[0]).abs());
        for (c, o) in fit.coefficients.iter().zip(&oracle[1..]) {
            worst = worst.max((c - o).abs());
        }
    }
    ensure!(worst < 1e-8, "max deviation from dense oracle {worst}");

    let mut affine_worst: f64 = 0.0;
    let mut min_r2: f64 = 1.0;
    for _ in 0..20 {
        let s = 2 + rng.below(11);
        let masks = sample_masks(s, 1000, &mut rng).map_err(|e| e.to_string())?;
        let truth: Vec<f64> = (0..s).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let c0 = rng.uniform();
        let y: Vec<f64> = (0..1000)
            .map(|i| c0 + masks.row(i).iter().zip(&truth).map(|(&z, t)| z as f64 * t).sum::<f64>())
            .collect();
        let w = kernel_weights(&masks, 0.25).map_err(|e| e.to_string())?;
        let fit = fit_surrogate(&masks, &y, &w, 1e-8).map_err(|e| e.to_string())?;
        for (c, t) in fit.coefficients.iter().zip(&truth) {
            affine_worst = affine_worst.max((c - t).abs());
        }
        min_r2 = min_r2.min(fit.r2);
    }
    ensure!(affine_worst < 1e-6, "affine recovery error {affine_worst}");
    ensure!(min_r2 >= 0.999, "affine R^2 {min_r2}");
    Ok(format!(
        "oracle deviation {worst:.1e}; affine error {affine_worst:.1e}, min R^2 {min_r2:.6}"
    ))
}

struct Planted {
    original: ImageTensor,
    region: Vec<(usize, usize)>,
}

impl Classifier for Planted {
    fn n_classes(&self) -> usize {
        2
    }

    fn predict_proba(&self, batch: &[ImageTensor]) -> cellxai::Result<ProbabilityMatrix> {
        let p: Vec<f64> = batch
            .iter()
            .map(|img| {
                let kept = self
                    .region
                    .iter()
                    .filter(|&&(y, x)| img.pixel(y, x) == self.original.pixel(y, x))
                    .count();
                kept as f64 / self.region.len() as f64
            })
            .collect();
        ProbabilityMatrix::from_positive(&p)
    }
}

fn c7_planted_region() -> Outcome {
    let start = Instant::now();
    let mut rng = RandomStream::new(77);
    let mut region = Vec::new();
    let img = ImageTensor::from_fn(299, 299, |y, x| {
        let n = rng.uniform() as f32 * 0.1;
        if ((y as f64 - 180.0).powi(2) + (x as f64 - 120.0).powi(2)).sqrt() <= 16.0 {
            region.push((y, x));
            [0.35 + n, 0.1 + n, 0.55 + n]
        } else {
            [0.85 + n, 0.7 + n, 0.75 + n]
        }
    });
    let seg = slic_segment(&img, &SlicParams::default()).map_err(|e| e.to_string())?;
    let mut overlap = vec![0usize; seg.n_segments()];
    for &(y, x) in &region {
        overlap[seg.segment_at(y, x)] += 1;
    }
    let covering = (0..overlap.len()).max_by_key(|&s| (overlap[s], std::cmp::Reverse(s))).unwrap();
    let share = overlap[covering] as f64 / region.len() as f64;

    let clf = Planted { original: img.clone(), region };
    let mut hits = 0;
    for seed in 0..100 {
        let e = explain(&img, &clf, &ExplainParams::with_seed(seed)).map_err(|e| e.to_string())?;
        if e.segment_weights[0].segment == covering {
            hits += 1;
        }
    }
    let t = start.elapsed();
    ensure!(hits >= 95, "planted segment ranked first in {hits}/100 runs");
    ensure!(t < Duration::from_secs(120), "took {t:?}");
    Ok(format!(
        "{hits}/100 runs (S={}, covering segment holds {:.0}% of region) in {:.1}s",
        seg.n_segments(),
        share * 100.0,
        t.as_secs_f64()
    ))
}

const ARTIFACTS: [&str; 5] = [
    "explanation.json",
    "segments.png",
    "boundaries.png",
    "heatmap.png",
    "heatmap_positive.png",
];

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let image = dir.path().join("cell.bmp");
    std::fs::write(&image, common::cell_bmp(8)).map_err(|e| e.to_string())?;
    let model = dir.path().join("params.json");
    common::reference_params(&model, 8);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = common::run(&[
            "explain",
            "--image",
            image.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure!(o.status.success(), "explain failed: {}", common::stderr(&o));
        outputs.push(out);
    }
    for name in ARTIFACTS {
        let a = std::fs::read(outputs[0].join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = std::fs::read(outputs[1].join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(a == b, "{name} differs between runs");
    }
    Ok("explanation.json and four PNGs byte-identical across two runs".into())
}

fn c9_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    common::bright_dark_tree(&data, 18);
    let out = dir.path().join("out");
    let o = common::run(&["ingest", "--root", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    ensure!(o.status.success(), "ingest: {}", common::stderr(&o));
    let manifest = out.join("manifest.jsonl");
    let o = common::run(&["split", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    ensure!(o.status.success(), "split: {}", common::stderr(&o));
    let o = common::run(&[
        "train-ref",
        "--manifest",
        manifest.to_str().unwrap(),
        "--folds",
        out.join("folds.json").to_str().unwrap(),
        "--root",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    ensure!(o.status.success(), "train-ref: {}", common::stderr(&o));

    let read = |name: &str| -> Result<serde_json::Value, String> {
        let text = std::fs::read_to_string(out.join(name)).map_err(|e| format!("{name}: {e}"))?;
        serde_json::from_str(&text).map_err(|e| format!("{name}: {e}"))
    };
    let folds = read("folds.json")?;
    ensure!(folds["k"] == 3, "folds.json k = {}", folds["k"]);
    let report = read("report.json")?;
    let proto = &report["protocol"];
    ensure!(proto["k"] == 3, "report k = {}", proto["k"]);
    ensure!(proto["fold"] == 1, "report fold = {}", proto["fold"]);
    ensure!(proto["epochs"] == 35, "report epochs = {}", proto["epochs"]);
    ensure!(proto["batch_size"] == 32, "report batch size = {}", proto["batch_size"]);
    ensure!(report["meta"]["seed"].is_u64(), "report lacks seed");
    let params = read("params.json")?;
    ensure!(
        params["config"]["epochs"] == 35 && params["config"]["batch_size"] == 32,
        "params.json config echo"
    );

    let csv = std::fs::read_to_string(out.join("history.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    ensure!(
        header == ["epoch", "loss", "accuracy", "f1", "val_loss", "val_accuracy", "val_f1"],
        "history header {header:?}"
    );
    let rows = lines.count();
    ensure!(rows == 35, "history has {rows} epochs");
    let svg = std::fs::read_to_string(out.join("history.svg")).map_err(|e| e.to_string())?;
    ensure!(svg.matches("<polyline").count() == 6, "history.svg series count");
    Ok(format!(
        "k=3, fold 1, 35 epochs, batch 32 in report.json; six series over {rows} epochs; val accuracy {}",
        report["metrics"]["accuracy"]
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("class weights", c1_class_weights),
        ("metric oracle equivalence", c2_metric_oracle),
        ("stratification", c3_stratification),
        ("augmentation", c4_augmentation),
        ("reference training", c5_reference_training),
        ("LIME surrogate", c6_surrogate),
        ("LIME end-to-end", c7_planted_region),
        ("determinism", c8_determinism),
        ("protocol fidelity", c9_protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match result {
            Ok(detail) => format!("PASS criterion {}: {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                format!("FAIL criterion {}: {name} ({secs:.1}s): {why}", i + 1)
            }
        };
        let _ = writeln!(stdout, "{line}");
    }
    let _ = stdout.flush();
    if failed > 0 {
        let _ = writeln!(stdout, "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
