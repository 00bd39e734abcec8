use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use cellxai::augment::augment_indexed;
use cellxai::explain::{self, render_boundaries, render_heatmap, render_segments, slic_segment, write_png, Explanation};
use cellxai::imagestore::{content_digest, decode_bmp, ingest, normalize_resize, Manifest};
use cellxai::metrics::{self, ConfusionCounts, MetricReport, ProbabilityMatrix, TrainingHistory};
use cellxai::model::{
    load_interchange, train_reference, Classifier, Dataset, InterchangeModelHandle, ReferenceNet, CLASS_NAMES,
};
use cellxai::sampling::{check_stratification, compute_class_weights, stratified_holdout, stratified_kfold, FoldAssignment};
use cellxai::tensor::ImageTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Metadata, RunConfig};
use crate::{Cli, Command, EvaluateArgs, ExplainArgs, SplitArgs, TrainArgs, EXIT_DATA, EXIT_MODEL, EXIT_USAGE};

const EVAL_BATCH: usize = 64;

#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

impl CmdError {
    fn usage(m: impl Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn data(m: impl Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: m.to_string(),
        }
    }

    fn model(m: impl Display) -> Self {
        Self {
            code: EXIT_MODEL,
            message: m.to_string(),
        }
    }
}

impl From<cellxai::Error> for CmdError {
    fn from(e: cellxai::Error) -> Self {
        if e.is_model_error() {
            Self::model(e)
        } else {
            Self::data(e)
        }
    }
}

type CmdResult<T = ()> = Result<T, CmdError>;

pub fn run(cli: Cli) -> CmdResult {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(CmdError::usage)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Ingest(a) => {
            set_opt(&mut cfg.data_root, a.root);
            set_opt(&mut cfg.out_dir, a.out);
            cmd_ingest(&cfg)
        }
        Command::Weights(a) => {
            set_opt(&mut cfg.out_dir, a.out);
            cmd_weights(&cfg, &a.manifest)
        }
        Command::Split(a) => cmd_split(cfg, a),
        Command::TrainRef(a) => cmd_train_ref(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(cfg, a),
        Command::Explain(a) => cmd_explain(cfg, a),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn out_dir(cfg: &RunConfig) -> CmdResult<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CmdError::data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn data_root(cfg: &RunConfig, manifest: &Path) -> PathBuf {
    cfg.data_root
        .clone()
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf())
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(CmdError::data)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CmdError::data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CmdError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CmdError::data(format!("invalid {}: {e}", path.display())))
}

fn cmd_ingest(cfg: &RunConfig) -> CmdResult {
    let root = cfg
        .data_root
        .as_deref()
        .ok_or_else(|| CmdError::usage("no data root given (--root or data_root)"))?;
    let rule = cfg.label_rule().map_err(CmdError::usage)?;
    let report = ingest(root, &rule)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let path = out_dir(cfg)?.join("manifest.jsonl");
    report.manifest.write(&path)?;
    println!("{} images, {} duplicates", report.manifest.records.len(), report.duplicates);
    Ok(())
}

#[derive(Debug, Serialize)]
struct WeightsFile {
    meta: Metadata,
    n_samples: usize,
    counts: BTreeMap<String, usize>,
    weights: BTreeMap<String, f64>,
}

fn cmd_weights(cfg: &RunConfig, manifest: &Path) -> CmdResult {
    let m = Manifest::read(manifest)?;
    let labels = m.labels();
    let w = compute_class_weights(&labels, CLASS_NAMES.len())?;
    let counts = cellxai::sampling::class_counts(&labels, CLASS_NAMES.len())?;
    let file = WeightsFile {
        meta: cfg.metadata(),
        n_samples: labels.len(),
        counts: counts.iter().enumerate().map(|(c, &n)| (c.to_string(), n)).collect(),
        weights: w.0.iter().enumerate().map(|(c, &v)| (c.to_string(), v)).collect(),
    };
    let path = out_dir(cfg)?.join("weights.json");
    write_json(&path, &file)?;
    for (c, v) in &file.weights {
        println!("class {c}: {v}");
    }
    Ok(())
}

/// Fold of every manifest record; `None` marks held-out records.
#[derive(Debug, Serialize, Deserialize)]
struct FoldsFile {
    meta: Metadata,
    k: usize,
    holdout_fraction: f64,
    ids: Vec<String>,
    fold_of: Vec<Option<usize>>,
}

impl FoldsFile {
    fn check_against(&self, m: &Manifest) -> CmdResult {
        let same = self.ids.len() == m.records.len()
            && self.ids.iter().zip(&m.records).all(|(a, r)| *a == r.id)
            && self.fold_of.len() == self.ids.len();
        if same {
            Ok(())
        } else {
            Err(CmdError::data("folds file does not match the manifest"))
        }
    }

    fn members(&self, fold: Option<usize>) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }
}

fn cmd_split(mut cfg: RunConfig, a: SplitArgs) -> CmdResult {
    set(&mut cfg.k, a.k);
    set(&mut cfg.holdout_fraction, a.holdout_fraction);
    set_opt(&mut cfg.out_dir, a.out);
    let m = Manifest::read(&a.manifest)?;
    let labels = m.labels();
    let (pool, holdout) = if cfg.holdout_fraction > 0.0 {
        stratified_holdout(&labels, cfg.holdout_fraction, cfg.seed)?
    } else {
        ((0..labels.len()).collect(), Vec::new())
    };
    let pool_labels: Vec<usize> = pool.iter().map(|&i| labels[i]).collect();
    let fa: FoldAssignment = stratified_kfold(&pool_labels, cfg.k, cfg.seed)?;
    if a.check {
        check_stratification(&fa, &pool_labels).map_err(CmdError::data)?;
    }
    let mut fold_of = vec![None; labels.len()];
    for (p, &i) in pool.iter().enumerate() {
        fold_of[i] = Some(fa.fold_of[p]);
    }
    let file = FoldsFile {
        meta: cfg.metadata(),
        k: cfg.k,
        holdout_fraction: cfg.holdout_fraction,
        ids: m.records.iter().map(|r| r.id.clone()).collect(),
        fold_of,
    };
    write_json(&out_dir(&cfg)?.join("folds.json"), &file)?;
    if a.check {
        println!("stratification ok: {} folds, {} held out", cfg.k, holdout.len());
    } else {
        println!("{} folds, {} held out", cfg.k, holdout.len());
    }
    Ok(())
}

/// Loads records in parallel, keeping their order.
fn load_pixels(m: &Manifest, root: &Path, idx: &[usize]) -> CmdResult<Vec<ImageTensor>> {
    idx.par_iter()
        .map(|&i| m.load(root, i).map(|c| c.pixels))
        .collect::<cellxai::Result<Vec<_>>>()
        .map_err(CmdError::from)
}

#[derive(Debug, Serialize)]
struct Protocol {
    k: usize,
    fold: Option<usize>,
    epochs: usize,
    batch_size: usize,
}

#[derive(Debug, Serialize)]
struct Report {
    meta: Metadata,
    model: String,
    protocol: Protocol,
    evaluated_on: String,
    n_samples: usize,
    metrics: MetricReport,
    confusion: ConfusionCounts,
}

fn build_report(
    cfg: &RunConfig,
    model: &str,
    protocol: Protocol,
    evaluated_on: String,
    labels: &[usize],
    p: &ProbabilityMatrix,
) -> CmdResult<Report> {
    Ok(Report {
        meta: cfg.metadata(),
        model: model.into(),
        protocol,
        evaluated_on,
        n_samples: labels.len(),
        metrics: MetricReport::compute(labels, p)?,
        confusion: metrics::confusion(labels, p, metrics::DEFAULT_THRESHOLD)?,
    })
}

fn history_svg(h: &TrainingHistory, meta: &Metadata) -> String {
    let svg = h.to_svg();
    let comment = format!(
        "<!-- seed={} config_digest={} version={} -->\n",
        meta.seed, meta.config_digest, meta.version
    );
    match svg.find('\n') {
        Some(i) => format!("{}{}{}", &svg[..=i], comment, &svg[i + 1..]),
        None => svg,
    }
}

fn cmd_train_ref(mut cfg: RunConfig, a: TrainArgs) -> CmdResult {
    set_opt(&mut cfg.data_root, a.root);
    set_opt(&mut cfg.out_dir, a.out);
    set(&mut cfg.report_fold, a.fold);
    set(&mut cfg.reference.epochs, a.epochs);
    set(&mut cfg.reference.batch_size, a.batch_size);
    set(&mut cfg.reference.learning_rate, a.learning_rate);
    set(&mut cfg.reference.hidden_units, a.hidden_units);
    set(&mut cfg.reference.input_side, a.input_side);
    set(&mut cfg.augment_copies, a.augment_copies);
    cfg.propagate_seed();
    cfg.reference.validate().map_err(CmdError::usage)?;
    cfg.augment.validate().map_err(CmdError::usage)?;

    let m = Manifest::read(&a.manifest)?;
    let folds: FoldsFile = read_json(&a.folds)?;
    folds.check_against(&m)?;
    cfg.k = folds.k;
    let fold = cfg.report_fold;
    if fold >= folds.k {
        return Err(CmdError::data(format!("fold {fold} out of range for k={}", folds.k)));
    }
    let root = data_root(&cfg, &a.manifest);
    let val_idx = folds.members(Some(fold));
    let train_idx: Vec<usize> = (0..folds.fold_of.len())
        .filter(|&i| matches!(folds.fold_of[i], Some(f) if f != fold))
        .collect();

    let side = cfg.reference.input_side;
    let copies = cfg.augment_copies;
    let train_feats: Vec<Vec<ImageTensor>> = train_idx
        .par_iter()
        .map(|&i| {
            let px = m.load(&root, i)?.pixels;
            let mut out = Vec::with_capacity(copies + 1);
            for c in 0..copies {
                let aug = augment_indexed(&px, (i * copies + c) as u64, &cfg.augment);
                out.push(aug.resize_bilinear(side, side));
            }
            out.insert(0, px.resize_bilinear(side, side));
            Ok(out)
        })
        .collect::<cellxai::Result<_>>()?;
    let mut train = Dataset::new(cfg.reference.input_dim());
    for (&i, feats) in train_idx.iter().zip(&train_feats) {
        for f in feats {
            train.push_features(f.data(), m.records[i].label)?;
        }
    }
    let val_px = load_pixels(&m, &root, &val_idx)?;
    let val = Dataset::from_images(val_idx.iter().zip(&val_px).map(|(&i, p)| (p, m.records[i].label)), side)?;

    let train_labels: Vec<usize> = train_idx.iter().map(|&i| m.records[i].label as usize).collect();
    let weights = compute_class_weights(&train_labels, CLASS_NAMES.len())?;
    let outcome = train_reference(&train, &val, &cfg.reference, &weights)?;

    let dir = out_dir(&cfg)?;
    let meta = cfg.metadata();
    fs::write(dir.join("params.json"), outcome.net.to_json()?)
        .map_err(|e| CmdError::data(format!("cannot write params: {e}")))?;
    if !outcome.history.is_empty() {
        fs::write(dir.join("history.csv"), outcome.history.to_csv())
            .and_then(|_| fs::write(dir.join("history.svg"), history_svg(&outcome.history, &meta)))
            .map_err(|e| CmdError::data(format!("cannot write history: {e}")))?;
    }

    let p = ProbabilityMatrix::from_positive(&outcome.net.predict_dataset(&val))?;
    let val_labels: Vec<usize> = val.labels().iter().map(|&y| y as usize).collect();
    let protocol = Protocol {
        k: folds.k,
        fold: Some(fold),
        epochs: cfg.reference.epochs,
        batch_size: cfg.reference.batch_size,
    };
    let report = build_report(&cfg, "reference", protocol, format!("fold {fold}"), &val_labels, &p)?;
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "trained {} epochs on {} samples; fold {fold} accuracy {:.4}",
        cfg.reference.epochs,
        train.len(),
        report.metrics.accuracy
    );
    Ok(())
}

enum LoadedModel {
    Reference(ReferenceNet),
    Interchange(Box<dyn Classifier>),
}

impl LoadedModel {
    fn kind(&self) -> &'static str {
        match self {
            Self::Reference(_) => "reference",
            Self::Interchange(_) => "interchange",
        }
    }

    fn classifier(&self) -> &dyn Classifier {
        match self {
            Self::Reference(n) => n,
            Self::Interchange(c) => c.as_ref(),
        }
    }
}

fn load_model(path: Option<&Path>) -> CmdResult<LoadedModel> {
    let path = path.ok_or_else(|| CmdError::usage("no model given (--model or model)"))?;
    if !path.is_file() {
        return Err(CmdError::model(format!("model file {} not found", path.display())));
    }
    let is_onnx = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("onnx"));
    if is_onnx {
        let handle = InterchangeModelHandle::open(path)?;
        return Ok(LoadedModel::Interchange(Box::new(load_interchange(&handle)?)));
    }
    let text = fs::read_to_string(path).map_err(|e| CmdError::model(format!("cannot read {}: {e}", path.display())))?;
    Ok(LoadedModel::Reference(ReferenceNet::from_json(&text)?))
}

fn cmd_evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> CmdResult {
    set_opt(&mut cfg.data_root, a.root);
    set_opt(&mut cfg.out_dir, a.out);
    set_opt(&mut cfg.model, a.model);
    set(&mut cfg.report_fold, a.fold);
    let model = load_model(cfg.model.as_deref())?;
    let m = Manifest::read(&a.manifest)?;
    let folds: FoldsFile = read_json(&a.folds)?;
    folds.check_against(&m)?;
    cfg.k = folds.k;
    let root = data_root(&cfg, &a.manifest);

    let (fold, idx, evaluated_on) = if a.holdout {
        (None, folds.members(None), "holdout".to_string())
    } else {
        let f = cfg.report_fold;
        if f >= folds.k {
            return Err(CmdError::data(format!("fold {f} out of range for k={}", folds.k)));
        }
        (Some(f), folds.members(Some(f)), format!("fold {f}"))
    };
    if idx.is_empty() {
        return Err(CmdError::data(format!("no records in {evaluated_on}")));
    }

    let classifier = model.classifier();
    let mut parts = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let px = load_pixels(&m, &root, chunk)?;
        parts.push(classifier.predict_proba(&px)?);
    }
    let p = ProbabilityMatrix::concat(&parts)?;
    let labels: Vec<usize> = idx.iter().map(|&i| m.records[i].label as usize).collect();
    let (epochs, batch_size) = match &model {
        LoadedModel::Reference(n) => (n.config.epochs, n.config.batch_size),
        LoadedModel::Interchange(_) => (cfg.reference.epochs, cfg.reference.batch_size),
    };
    let protocol = Protocol {
        k: folds.k,
        fold,
        epochs,
        batch_size,
    };
    let report = build_report(&cfg, model.kind(), protocol, evaluated_on.clone(), &labels, &p)?;
    write_json(&out_dir(&cfg)?.join("report.json"), &report)?;
    println!(
        "{evaluated_on}: accuracy {:.4}, f1 {:.4}, log loss {:.4}",
        report.metrics.accuracy, report.metrics.f1, report.metrics.logloss
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExplanationFile<'a> {
    meta: Metadata,
    image_digest: String,
    model: &'static str,
    #[serde(flatten)]
    explanation: &'a Explanation,
}

fn cmd_explain(mut cfg: RunConfig, a: ExplainArgs) -> CmdResult {
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.out_dir, a.out);
    set(&mut cfg.lime.n_samples, a.n_samples);
    set(&mut cfg.lime.n_segments, a.n_segments);
    set(&mut cfg.lime.compactness, a.compactness);
    set(&mut cfg.lime.kernel_width, a.kernel_width);
    set(&mut cfg.lime.alpha, a.alpha);
    set(&mut cfg.lime.top_k, a.top_k);
    set(&mut cfg.lime.positive_only, a.positive_only);
    let params = cfg.explain_params();
    params.slic.validate().map_err(CmdError::usage)?;

    let model = load_model(cfg.model.as_deref())?;
    let bytes = fs::read(&a.image).map_err(|e| CmdError::data(format!("cannot read {}: {e}", a.image.display())))?;
    let image = normalize_resize(&decode_bmp(&bytes)?);

    let seg = slic_segment(&image, &params.slic)?;
    let expl = explain::explain_with_segments(&image, &seg, model.classifier(), &params)?;

    let dir = out_dir(&cfg)?;
    let meta = cfg.metadata();
    let file = ExplanationFile {
        meta: meta.clone(),
        image_digest: content_digest(&bytes),
        model: model.kind(),
        explanation: &expl,
    };
    write_json(&dir.join("explanation.json"), &file)?;

    let text = meta.png_text();
    let top_k = cfg.lime.top_k;
    write_png(&dir.join("segments.png"), &render_segments(&image, &seg)?, &text)?;
    write_png(&dir.join("boundaries.png"), &render_boundaries(&image, &seg)?, &text)?;
    write_png(&dir.join("heatmap.png"), &render_heatmap(&image, &seg, &expl, false, top_k)?, &text)?;
    write_png(
        &dir.join("heatmap_positive.png"),
        &render_heatmap(&image, &seg, &expl, cfg.lime.positive_only, top_k)?,
        &text,
    )?;

    println!("The prediction of the sample is: {}", expl.label_name);
    println!("Prediction Confidence Percentage is: {}", expl.confidence_percent());
    Ok(())
}
