//! Single-hidden-layer reference classifier:
//! flatten → dense(hidden, ReLU) → dense(1, sigmoid), trained with Adam on
//! class-weighted binary cross-entropy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{is_clipped, true_class_log, weighted_bce};
use super::Classifier;
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionCounts, EpochRecord, ProbabilityMatrix, TrainingHistory};
use crate::rng::RandomStream;
use crate::sampling::ClassWeights;
use crate::tensor::{ImageTensor, CHANNELS};

pub const PARAMETERS_FORMAT: &str = "cellxai-reference-net";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceNetConfig {
    /// Inputs are bilinearly resampled to `input_side × input_side × 3`
    /// before the first layer.
    pub input_side: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ReferenceNetConfig {
    fn default() -> Self {
        Self {
            input_side: 32,
            hidden_units: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 35,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ReferenceNetConfig {
    pub fn input_dim(&self) -> usize {
        self.input_side * self.input_side * CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.input_side > 0
            && self.hidden_units > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.adam_eps > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2);
        if positive {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid reference net config: {self:?}"
            )))
        }
    }
}

/// All weights in one flat buffer: `w1` (hidden × input, row-major), `b1`,
/// `w2`, then the scalar `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    input_dim: usize,
    hidden: usize,
    values: Vec<f64>,
}

pub type Gradients = Vec<f64>;

impl Parameters {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            values: vec![0.0; hidden * input_dim + 2 * hidden + 1],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` per layer, drawn in storage order.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut RandomStream) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let first = hidden * input_dim + hidden;
        for (i, v) in p.values.iter_mut().enumerate() {
            let a = if i < first { a1 } else { a2 };
            *v = rng.uniform_in(-a, a);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn w1_end(&self) -> usize {
        self.hidden * self.input_dim
    }

    fn w1(&self) -> &[f64] {
        &self.values[..self.w1_end()]
    }

    fn b1(&self) -> &[f64] {
        &self.values[self.w1_end()..self.w1_end() + self.hidden]
    }

    fn w2(&self) -> &[f64] {
        let s = self.w1_end() + self.hidden;
        &self.values[s..s + self.hidden]
    }

    fn b2(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn hidden_pre(&self, x: &[f32], pre: &mut [f64]) {
        let w1 = self.w1();
        for (j, (out, &b)) in pre.iter_mut().zip(self.b1()).enumerate() {
            let row = &w1[j * self.input_dim..(j + 1) * self.input_dim];
            *out = b + row.iter().zip(x).map(|(&w, &xi)| w * xi as f64).sum::<f64>();
        }
    }

    /// Positive-class probability for one feature vector.
    pub fn forward(&self, x: &[f32]) -> f64 {
        let mut pre = vec![0.0; self.hidden];
        self.hidden_pre(x, &mut pre);
        let z = self.b2()
            + pre
                .iter()
                .zip(self.w2())
                .map(|(&h, &w)| h.max(0.0) * w)
                .sum::<f64>();
        sigmoid(z)
    }

    /// Mean weighted BCE over `batch` and its gradient.
    pub fn loss_and_gradient(&self, data: &Dataset, batch: &[usize], w: &ClassWeights) -> (f64, Gradients) {
        let mut grad = vec![0.0; self.values.len()];
        let mut pre = vec![0.0; self.hidden];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let (w1_end, hidden) = (self.w1_end(), self.hidden);

        for &i in batch {
            let x = data.features(i);
            let y = data.labels[i];
            self.hidden_pre(x, &mut pre);
            let z = self.b2()
                + pre
                    .iter()
                    .zip(self.w2())
                    .map(|(&h, &w)| h.max(0.0) * w)
                    .sum::<f64>();
            let p = sigmoid(z);
            let wy = w.get(y as usize);
            total += wy * true_class_log(p, y);
            if is_clipped(p, y) {
                continue;
            }
            let dz = scale * wy * (p - y as f64);

            let (w1g, rest) = grad.split_at_mut(w1_end);
            let (b1g, rest) = rest.split_at_mut(hidden);
            let (w2g, b2g) = rest.split_at_mut(hidden);
            b2g[0] += dz;
            for j in 0..hidden {
                let h = pre[j];
                if h <= 0.0 {
                    continue;
                }
                w2g[j] += dz * h;
                let dh = dz * self.w2()[j];
                b1g[j] += dh;
                let row = &mut w1g[j * self.input_dim..(j + 1) * self.input_dim];
                row.iter_mut().zip(x).for_each(|(g, &xi)| *g += dh * xi as f64);
            }
        }
        (-total * scale, grad)
    }

    pub fn to_file(&self, config: &ReferenceNetConfig) -> ParametersFile {
        ParametersFile {
            format: PARAMETERS_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            input_dim: self.input_dim,
            hidden: self.hidden,
            w1: self.w1().to_vec(),
            b1: self.b1().to_vec(),
            w2: self.w2().to_vec(),
            b2: self.b2(),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// On-disk JSON form of trained parameters with the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametersFile {
    pub format: String,
    pub version: String,
    pub seed: u64,
    pub config: ReferenceNetConfig,
    pub input_dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ParametersFile {
    pub fn into_net(self) -> Result<ReferenceNet> {
        if self.format != PARAMETERS_FORMAT {
            return Err(Error::Model(format!("unexpected format `{}`", self.format)));
        }
        let ok = self.input_dim == self.config.input_dim()
            && self.hidden == self.config.hidden_units
            && self.w1.len() == self.hidden * self.input_dim
            && self.b1.len() == self.hidden
            && self.w2.len() == self.hidden;
        if !ok {
            return Err(Error::Model("parameter shapes do not match config".into()));
        }
        let mut values = self.w1;
        values.extend(self.b1);
        values.extend(self.w2);
        values.push(self.b2);
        let params = Parameters {
            input_dim: self.input_dim,
            hidden: self.hidden,
            values,
        };
        if !params.is_finite() {
            return Err(Error::Model("parameters contain non-finite values".into()));
        }
        Ok(ReferenceNet {
            config: self.config,
            params,
        })
    }
}

/// Feature matrix (one downsampled image per row) with binary labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    dim: usize,
    features: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn push_features(&mut self, x: &[f32], label: u8) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::LengthMismatch {
                what: "feature vector vs dataset dimension",
                left: x.len(),
                right: self.dim,
            });
        }
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label {label} is not binary")));
        }
        self.features.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    /// Downsamples `image` to `side × side` and appends it.
    pub fn push_image(&mut self, image: &ImageTensor, side: usize, label: u8) -> Result<()> {
        self.push_features(featurize(image, side).data(), label)
    }

    pub fn from_images<'a>(
        images: impl IntoIterator<Item = (&'a ImageTensor, u8)>,
        side: usize,
    ) -> Result<Self> {
        let mut d = Self::new(side * side * CHANNELS);
        for (img, y) in images {
            d.push_image(img, side, y)?;
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

fn featurize(image: &ImageTensor, side: usize) -> ImageTensor {
    image.resize_bilinear(side, side)
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Trained reference network; also the [`Classifier`] used at inference.
#[derive(Debug, Clone)]
pub struct ReferenceNet {
    pub config: ReferenceNetConfig,
    pub params: Parameters,
}

impl ReferenceNet {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParametersFile = serde_json::from_str(text)
            .map_err(|e| Error::Model(format!("cannot parse parameters: {e}")))?;
        file.into_net()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.params.to_file(&self.config))?)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len())
            .into_par_iter()
            .map(|i| self.params.forward(data.features(i)))
            .collect()
    }
}

impl Classifier for ReferenceNet {
    fn n_classes(&self) -> usize {
        2
    }

    fn predict_proba(&self, batch: &[ImageTensor]) -> Result<ProbabilityMatrix> {
        let p: Vec<f64> = batch
            .par_iter()
            .map(|img| {
                let x = featurize(img, self.config.input_side);
                self.params.forward(x.data())
            })
            .collect();
        ProbabilityMatrix::from_positive(&p)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ReferenceNet,
    pub history: TrainingHistory,
}

fn binary_metrics(p: &[f64], y: &[u8]) -> Result<(f64, f64)> {
    let mut c = ConfusionCounts::default();
    for (&pi, &yi) in p.iter().zip(y) {
        c.add(yi == 1, pi >= metrics::DEFAULT_THRESHOLD);
    }
    Ok((metrics::accuracy(&c)?, metrics::f1(&c)?))
}

/// Mini-batch Adam on class-weighted BCE. The stream seeded with
/// `cfg.seed` first initializes the weights, then shuffles each epoch.
///
/// Per epoch the history records the running training loss, accuracy and F1
/// (accumulated batch by batch, before each update) and unweighted
/// validation loss, accuracy and F1 after the epoch.
pub fn train_reference(
    train: &Dataset,
    val: &Dataset,
    cfg: &ReferenceNetConfig,
    w: &ClassWeights,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    for d in [train, val] {
        if d.dim() != cfg.input_dim() {
            return Err(Error::LengthMismatch {
                what: "dataset dimension vs config input dimension",
                left: d.dim(),
                right: cfg.input_dim(),
            });
        }
    }

    let mut rng = RandomStream::new(cfg.seed);
    let mut params = Parameters::init(cfg.input_dim(), cfg.hidden_units, &mut rng);
    let mut adam = Adam::new(
        params.len(),
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let unit = ClassWeights::uniform(2);
    let mut history = TrainingHistory::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut counts = ConfusionCounts::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = params.loss_and_gradient(train, batch, w);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            for &i in batch {
                let p = params.forward(train.features(i));
                counts.add(train.labels[i] == 1, p >= metrics::DEFAULT_THRESHOLD);
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut params.values, &grad);
        }

        let net = ReferenceNet {
            config: cfg.clone(),
            params: params.clone(),
        };
        let pv = net.predict_dataset(val);
        let val_loss = weighted_bce(&pv, val.labels(), &unit)?;
        let (val_accuracy, val_f1) = binary_metrics(&pv, val.labels())?;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            accuracy: metrics::accuracy(&counts)?,
            f1: metrics::f1(&counts)?,
            val_loss,
            val_accuracy,
            val_f1,
        });
    }

    Ok(TrainOutcome {
        net: ReferenceNet {
            config: cfg.clone(),
            params,
        },
        history,
    })
}

/// Step for central differences.
const FD_STEP: f64 = 1e-5;
/// Denominator floor so near-zero gradients compare on an absolute scale.
const FD_FLOOR: f64 = 1e-5;
const FD_COORDS: usize = 128;

/// Max relative error between the analytic gradient and central finite
/// differences on [`FD_COORDS`] coordinates sampled with `seed`.
pub fn grad_check(params: &Parameters, batch: &Dataset, w: &ClassWeights, seed: u64) -> f64 {
    grad_check_with(params, batch, w, seed, |p, d, w| {
        let idx: Vec<usize> = (0..d.len()).collect();
        p.loss_and_gradient(d, &idx, w).1
    })
}

/// [`grad_check`] against an arbitrary gradient routine. The error for each
/// coordinate is `|analytic - numeric| / max(|numeric|, 1e-5)`.
pub fn grad_check_with(
    params: &Parameters,
    batch: &Dataset,
    w: &ClassWeights,
    seed: u64,
    gradient: impl Fn(&Parameters, &Dataset, &ClassWeights) -> Gradients,
) -> f64 {
    assert!(!batch.is_empty(), "gradient check needs a non-empty batch");
    let idx: Vec<usize> = (0..batch.len()).collect();
    let loss = |p: &Parameters| p.loss_and_gradient(batch, &idx, w).0;
    let analytic = gradient(params, batch, w);

    let mut rng = RandomStream::new(seed);
    let n = params.len();
    let coords: Vec<usize> = if n <= FD_COORDS {
        (0..n).collect()
    } else {
        (0..FD_COORDS).map(|_| rng.below(n)).collect()
    };

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for k in coords {
        let orig = probe.values[k];
        probe.values[k] = orig + FD_STEP;
        let up = loss(&probe);
        probe.values[k] = orig - FD_STEP;
        let down = loss(&probe);
        probe.values[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = (analytic[k] - numeric).abs() / numeric.abs().max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_data(seed: u64, n: usize, dim: usize) -> Dataset {
        let mut rng = RandomStream::new(seed);
        let mut d = Dataset::new(dim);
        for i in 0..n {
            let x: Vec<f32> = (0..dim).map(|_| rng.uniform() as f32).collect();
            d.push_features(&x, (i % 2) as u8).unwrap();
        }
        d
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = tiny_data(1, 8, 12);
        let mut rng = RandomStream::new(2);
        let p = Parameters::init(12, 6, &mut rng);
        let w = ClassWeights(vec![1.5728828562997934, 0.7330170517051705]);
        assert!(grad_check(&p, &data, &w, 3) < 1e-4);
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let data = tiny_data(1, 8, 12);
        let mut rng = RandomStream::new(2);
        let p = Parameters::init(12, 6, &mut rng);
        let w = ClassWeights::uniform(2);
        let err = grad_check_with(&p, &data, &w, 3, |p, d, w| {
            let idx: Vec<usize> = (0..d.len()).collect();
            p.loss_and_gradient(d, &idx, w).1.iter().map(|g| 2.0 * g).collect()
        });
        assert!(err > 0.5, "mutant error {err}");
    }

    #[test]
    fn zero_network_on_zero_input() {
        let mut d = Dataset::new(5);
        d.push_features(&[0.0; 5], 1).unwrap();
        d.push_features(&[0.0; 5], 0).unwrap();
        let p = Parameters::zeros(5, 3);
        let err = grad_check(&p, &d, &ClassWeights::uniform(2), 0);
        assert!(err.is_finite() && err < 1e-4);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut values = vec![0.3, -1.2, 4.0];
        let before = values.clone();
        let mut adam = Adam::new(3, 1e-3, 0.9, 0.999, 1e-8);
        adam.step(&mut values, &[0.0; 3]);
        assert_eq!(values, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut values = vec![1.0, 1.0];
        let mut adam = Adam::new(2, 0.01, 0.9, 0.999, 1e-8);
        adam.step(&mut values, &[0.5, -2.0]);
        assert!((values[0] - 0.99).abs() < 1e-9);
        assert!((values[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = ReferenceNetConfig {
            input_side: 2,
            hidden_units: 4,
            epochs: 0,
            seed: 77,
            ..Default::default()
        };
        let data = tiny_data(5, 6, cfg.input_dim());
        let out = train_reference(&data, &data, &cfg, &ClassWeights::uniform(2)).unwrap();
        let mut rng = RandomStream::new(77);
        assert_eq!(out.net.params, Parameters::init(cfg.input_dim(), 4, &mut rng));
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = ReferenceNetConfig {
            input_side: 2,
            hidden_units: 4,
            epochs: 3,
            batch_size: 4,
            seed: 8,
            ..Default::default()
        };
        let data = tiny_data(5, 10, cfg.input_dim());
        let w = ClassWeights::uniform(2);
        let a = train_reference(&data, &data, &cfg, &w).unwrap();
        let b = train_reference(&data, &data, &cfg, &w).unwrap();
        assert_eq!(a.net.params, b.net.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn empty_split_is_rejected() {
        let cfg = ReferenceNetConfig {
            input_side: 2,
            ..Default::default()
        };
        let data = tiny_data(5, 4, cfg.input_dim());
        let empty = Dataset::new(cfg.input_dim());
        assert!(train_reference(&data, &empty, &cfg, &ClassWeights::uniform(2)).is_err());
    }

    #[test]
    fn diverging_run_reports_epoch_and_batch() {
        let cfg = ReferenceNetConfig {
            input_side: 1,
            hidden_units: 2,
            epochs: 2,
            ..Default::default()
        };
        let mut data = Dataset::new(3);
        data.push_features(&[f32::NAN, 0.0, 0.0], 1).unwrap();
        data.push_features(&[0.0, 0.0, 0.0], 0).unwrap();
        match train_reference(&data, &data, &cfg, &ClassWeights::uniform(2)) {
            Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parameters_round_trip_through_json() {
        let cfg = ReferenceNetConfig {
            input_side: 2,
            hidden_units: 3,
            seed: 4,
            ..Default::default()
        };
        let mut rng = RandomStream::new(4);
        let net = ReferenceNet {
            params: Parameters::init(cfg.input_dim(), 3, &mut rng),
            config: cfg,
        };
        let back = ReferenceNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(back.config, net.config);
    }

    #[test]
    fn predictions_are_row_stochastic() {
        let cfg = ReferenceNetConfig {
            input_side: 4,
            hidden_units: 3,
            ..Default::default()
        };
        let mut rng = RandomStream::new(1);
        let net = ReferenceNet {
            params: Parameters::init(cfg.input_dim(), 3, &mut rng),
            config: cfg,
        };
        let batch = vec![ImageTensor::filled(299, 299, 0.4), ImageTensor::filled(10, 20, 0.9)];
        let p = net.predict_proba(&batch).unwrap();
        assert_eq!(p.rows(), 2);
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
