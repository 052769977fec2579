//! Desk-scale semantic codec.
//!
//! Inputs are Gaussian blobs. The encoder is a frozen random projection
//! followed by `tanh`, reshaped to `C` feature maps of `W x H`; the task head
//! is a one-hidden-layer network producing pre-softmax class logits. Only the
//! head is trained, by full-batch gradient descent on cross-entropy.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{argmax, softmax, Activation, Mlp};
use crate::{rng, Error, Result};

/// Largest magnitude an encoded feature may take; keeps features strictly
/// inside `(-1, 1)` even when `tanh` rounds to one.
const FEATURE_LIMIT: f64 = 1.0 - f64::EPSILON;

/// `C` feature maps of `W x H`, stored map-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    c: usize,
    w: usize,
    h: usize,
    values: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(c: usize, w: usize, h: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != c * w * h {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {c}x{w}x{h} feature maps",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self { c, w, h, values })
    }

    pub fn zeros(c: usize, w: usize, h: usize) -> Self {
        Self {
            c,
            w,
            h,
            values: vec![0.0; c * w * h],
        }
    }

    pub fn count(&self) -> usize {
        self.c
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    /// Entries per map, `W * H`.
    pub fn map_len(&self) -> usize {
        self.w * self.h
    }

    pub fn map(&self, k: usize) -> &[f64] {
        &self.values[k * self.map_len()..(k + 1) * self.map_len()]
    }

    pub fn map_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.map_len();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_shape(&self, other: &FeatureMaps) -> bool {
        (self.c, self.w, self.h) == (other.c, other.w, other.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput {
    pub logits: Vec<f64>,
    /// Predicted class: argmax of the logits, ties to the lowest index.
    pub label: usize,
}

impl TaskOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let label = argmax(&logits);
        Self { logits, label }
    }

    /// Cross-entropy of the softmax of the logits against `target`.
    pub fn cross_entropy(&self, target: usize) -> f64 {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = self.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        lse - self.logits[target]
    }
}

/// Architecture of the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CodecShape {
    /// Number of semantics `C`.
    pub c: usize,
    pub w: usize,
    pub h: usize,
    /// Input dimension.
    pub d: usize,
    pub n_classes: usize,
    /// Task-head hidden width.
    pub hidden: usize,
}

impl CodecShape {
    pub fn features(&self) -> usize {
        self.c * self.w * self.h
    }
}

impl Default for CodecShape {
    fn default() -> Self {
        Self {
            c: 64,
            w: 2,
            h: 2,
            d: 32,
            n_classes: 10,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub shape: CodecShape,
    /// Row-major `features x d`.
    pub encoder_weights: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    pub head: Mlp,
    pub seed: u64,
    /// Training-set accuracy after [`train_codec`], if trained.
    pub train_accuracy: Option<f64>,
}

impl CodecParams {
    /// Random encoder projection (entries `N(0, 1/d)`, bias `U(-0.1, 0.1)`)
    /// and a freshly initialized `tanh` task head.
    pub fn init(shape: CodecShape, seed: u64) -> Self {
        let mut rng = rng::rng_from(rng::derive(seed, &[rng::stage::CODEC]));
        let scale = 1.0 / (shape.d as f64).sqrt();
        let encoder_weights = (0..shape.features() * shape.d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        let encoder_bias = (0..shape.features())
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        let head = Mlp::new(
            &[shape.features(), shape.hidden, shape.n_classes],
            Activation::Tanh,
            &mut rng,
        );
        Self {
            shape,
            encoder_weights,
            encoder_bias,
            head,
            seed,
            train_accuracy: None,
        }
    }
}

/// Labelled Gaussian blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_means: Vec<Vec<f64>>,
    pub noise_std: f64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Split into the first `n_train` samples and the rest.
    pub fn split(&self, n_train: usize) -> (SyntheticDataset, SyntheticDataset) {
        let n_train = n_train.min(self.len());
        let part = |r: std::ops::Range<usize>| SyntheticDataset {
            inputs: self.inputs[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
            class_means: self.class_means.clone(),
            noise_std: self.noise_std,
        };
        (part(0..n_train), part(n_train..self.len()))
    }
}

/// Blob geometry for [`generate_dataset_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub noise_std: f64,
    /// Radius of the sphere the class means are drawn on.
    pub mean_radius: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            noise_std: 1.0,
            mean_radius: 4.0,
        }
    }
}

/// [`generate_dataset_with`] using [`BlobSpec::default`].
pub fn generate_dataset(n: usize, d: usize, n_classes: usize, seed: u64) -> Result<SyntheticDataset> {
    generate_dataset_with(n, d, n_classes, BlobSpec::default(), seed)
}

/// `n` samples, label `i mod n_classes` for sample `i`, drawn as
/// `mean[label] + N(0, noise_std^2 I)`.
pub fn generate_dataset_with(
    n: usize,
    d: usize,
    n_classes: usize,
    blobs: BlobSpec,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if n < n_classes {
        return Err(Error::Config(format!(
            "{n} samples cannot cover {n_classes} classes"
        )));
    }
    if d == 0 {
        return Err(Error::Config("input dimension must be positive".into()));
    }
    let mut rng = rng::rng_from(rng::derive(seed, &[rng::stage::DATASET]));
    let class_means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.iter().map(|x| x / norm * blobs.mean_radius).collect()
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let inputs = labels
        .iter()
        .map(|&y| {
            class_means[y]
                .iter()
                .map(|m| m + blobs.noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Ok(SyntheticDataset {
        inputs,
        labels,
        class_means,
        noise_std: blobs.noise_std,
    })
}

/// `A = tanh(W_enc x + b_enc)` reshaped to `C x W x H`.
pub fn encode(x: &[f64], params: &CodecParams) -> Result<FeatureMaps> {
    let s = params.shape;
    if x.len() != s.d {
        return Err(Error::ShapeMismatch(format!(
            "input has {} entries, codec expects {}",
            x.len(),
            s.d
        )));
    }
    let values = params
        .encoder_weights
        .chunks_exact(s.d)
        .zip(&params.encoder_bias)
        .map(|(row, b)| {
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            z.tanh().clamp(-FEATURE_LIMIT, FEATURE_LIMIT)
        })
        .collect();
    FeatureMaps::new(s.c, s.w, s.h, values)
}

fn check_shape(a: &FeatureMaps, params: &CodecParams) -> Result<()> {
    let s = params.shape;
    if (a.c, a.w, a.h) != (s.c, s.w, s.h) {
        return Err(Error::ShapeMismatch(format!(
            "features are {}x{}x{}, codec expects {}x{}x{}",
            a.c, a.w, a.h, s.c, s.w, s.h
        )));
    }
    Ok(())
}

/// Task head on (possibly received) features.
pub fn task_forward(a: &FeatureMaps, params: &CodecParams) -> Result<TaskOutput> {
    check_shape(a, params)?;
    Ok(TaskOutput::from_logits(params.head.forward(&a.values)))
}

/// Jacobian of the logits with respect to the features, row-major
/// `N x (C * W * H)`.
pub fn grad_logits_wrt_features(a: &FeatureMaps, params: &CodecParams) -> Result<Vec<f64>> {
    check_shape(a, params)?;
    let trace = params.head.forward_trace(&a.values);
    let n = params.shape.n_classes;
    let mut scratch = vec![0.0; params.head.n_params()];
    let mut out = Vec::with_capacity(n * a.values.len());
    for class in 0..n {
        let mut upstream = vec![0.0; n];
        upstream[class] = 1.0;
        out.extend(params.head.backward(&trace, &upstream, &mut scratch));
    }
    Ok(out)
}

/// Mean cross-entropy, its gradient with respect to the head parameters, and
/// training accuracy over the dataset.
fn batch_loss(
    features: &[FeatureMaps],
    labels: &[usize],
    head: &Mlp,
) -> (f64, Vec<f64>, f64) {
    let mut grad = vec![0.0; head.n_params()];
    let mut loss = 0.0;
    let mut correct = 0usize;
    let scale = 1.0 / labels.len() as f64;
    for (a, &y) in features.iter().zip(labels) {
        let trace = head.forward_trace(&a.values);
        let out = TaskOutput::from_logits(trace.output.clone());
        loss += out.cross_entropy(y);
        correct += usize::from(out.label == y);
        let mut upstream = softmax(&trace.output);
        upstream[y] -= 1.0;
        upstream.iter_mut().for_each(|g| *g *= scale);
        head.backward(&trace, &upstream, &mut grad);
    }
    (loss * scale, grad, correct as f64 * scale)
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Mean cross-entropy before each update.
    pub losses: Vec<f64>,
}

/// Train the task head on frozen features. Returns the trained parameters
/// (with `train_accuracy` set) and the loss history.
pub fn train_codec(
    ds: &SyntheticDataset,
    shape: CodecShape,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(CodecParams, TrainingLog)> {
    train_from(CodecParams::init(shape, seed), ds, epochs, lr)
}

/// Continue training from existing parameters.
pub fn train_from(
    mut params: CodecParams,
    ds: &SyntheticDataset,
    epochs: usize,
    lr: f64,
) -> Result<(CodecParams, TrainingLog)> {
    if ds.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let features = ds
        .inputs
        .iter()
        .map(|x| encode(x, &params))
        .collect::<Result<Vec<_>>>()?;
    let mut log = TrainingLog::default();
    for _ in 0..epochs {
        let (loss, grad, _) = batch_loss(&features, &ds.labels, &params.head);
        if !loss.is_finite() {
            return Err(Error::Divergence("codec training loss".into()));
        }
        log.losses.push(loss);
        for (p, g) in params.head.params_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
    }
    let (_, _, accuracy) = batch_loss(&features, &ds.labels, &params.head);
    params.train_accuracy = Some(accuracy);
    Ok((params, log))
}

/// Fraction of outputs whose predicted label matches.
pub fn top1_accuracy(outputs: &[TaskOutput], labels: &[usize]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Empty("task outputs"));
    }
    if outputs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: outputs.len(),
            actual: labels.len(),
        });
    }
    let hits = outputs
        .iter()
        .zip(labels)
        .filter(|(o, &y)| o.label == y)
        .count();
    Ok(hits as f64 / outputs.len() as f64)
}

/// Held-out accuracy of `params` on `ds` with clean features.
pub fn evaluate(params: &CodecParams, ds: &SyntheticDataset) -> Result<f64> {
    let outputs = ds
        .inputs
        .iter()
        .map(|x| task_forward(&encode(x, params)?, params))
        .collect::<Result<Vec<_>>>()?;
    top1_accuracy(&outputs, &ds.labels)
}
