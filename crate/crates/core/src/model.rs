//! Small gradient-descent classifiers and the checkpoint trail they leave.
//!
//! Two architectures are supported: multinomial logistic regression and a
//! one-hidden-layer perceptron with rectified hidden units. Both end in a
//! linear layer followed by softmax cross-entropy. Training is plain
//! minibatch SGD (no momentum, no weight decay), and the full parameter vector
//! is snapshotted at the start of every epoch together with the learning rate
//! and the batch each sample landed in.
//!
//! Parameter layout (row-major, flattened):
//!
//! * logistic: `W` (`k x d`), `b` (`k`)
//! * mlp: `W1` (`h x d`), `b1` (`h`), `W2` (`k x h`), `b2` (`k`)
//!
//! The last linear layer is `W`/`b` or `W2`/`b2`; its per-sample gradient has
//! the closed form `(softmax(z) - onehot(y)) ⊗ [a; 1]` where `a` is the input
//! of that layer.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SampleId};
use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Logistic,
    Mlp,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Logistic => "logistic",
            Architecture::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Architecture::Logistic),
            "mlp" => Ok(Architecture::Mlp),
            _ => Err(Error::invalid(format!("unknown architecture `{s}`"))),
        }
    }
}

fn default_decay() -> f64 {
    1.0
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Hidden width; ignored by the logistic model.
    #[serde(default)]
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-epoch multiplicative learning-rate decay (`1.0` keeps it constant).
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
}

impl ModelConfig {
    pub fn logistic(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            architecture: Architecture::Logistic,
            hidden_units: 0,
            learning_rate,
            epochs,
            batch_size,
            seed,
            lr_decay: 1.0,
        }
    }

    pub fn mlp(
        hidden_units: usize,
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            architecture: Architecture::Mlp,
            hidden_units,
            ..Self::logistic(learning_rate, epochs, batch_size, seed)
        }
    }

    /// Learning rate used during epoch `t`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    /// Checks that do not depend on the training set.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::invalid("lr_decay must be positive"));
        }
        if self.architecture == Architecture::Mlp && self.hidden_units == 0 {
            return Err(Error::invalid("an mlp needs at least one hidden unit"));
        }
        Ok(())
    }

    /// Width of the last layer's input.
    pub fn penultimate_width(&self, input_dim: usize) -> usize {
        match self.architecture {
            Architecture::Logistic => input_dim,
            Architecture::Mlp => self.hidden_units,
        }
    }
}

/// Shape of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub architecture: Architecture,
    pub input_dim: usize,
    /// Hidden width (0 for logistic).
    pub hidden: usize,
    pub classes: usize,
}

impl Shape {
    pub fn penultimate_width(&self) -> usize {
        match self.architecture {
            Architecture::Logistic => self.input_dim,
            Architecture::Mlp => self.hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        let h = self.penultimate_width();
        let first = match self.architecture {
            Architecture::Logistic => 0,
            Architecture::Mlp => self.hidden * self.input_dim + self.hidden,
        };
        first + self.classes * h + self.classes
    }

    /// Offset of the last layer's weight matrix.
    pub fn last_layer_offset(&self) -> usize {
        match self.architecture {
            Architecture::Logistic => 0,
            Architecture::Mlp => self.hidden * self.input_dim + self.hidden,
        }
    }

    /// Number of last-layer parameters, `k * (h + 1)`.
    pub fn last_layer_len(&self) -> usize {
        self.classes * (self.penultimate_width() + 1)
    }
}

/// A model: shape plus flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub shape: Shape,
    pub values: Vec<f64>,
}

/// Forward-pass cache for one sample.
#[derive(Debug, Clone)]
struct Forward {
    hidden_pre: Vec<f64>,
    penultimate: Vec<f64>,
    probs: Vec<f64>,
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `-log softmax(z)[y]` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}

impl Params {
    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every
    /// weight and bias of a layer.
    pub fn init(shape: Shape, seed: u64) -> Params {
        let mut rng = seeded(seed, Stream::Init);
        let mut values = Vec::with_capacity(shape.param_count());
        let mut layer = |rng: &mut crate::rng::ChaCha8Rng, rows: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..rows * fan_in + rows {
                values.push(rng.random_range(-bound..=bound));
            }
        };
        if shape.architecture == Architecture::Mlp {
            layer(&mut rng, shape.hidden, shape.input_dim);
        }
        layer(&mut rng, shape.classes, shape.penultimate_width());
        Params { shape, values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Last-layer weights (`k x h`) and bias (`k`).
    fn last_layer(&self) -> (&[f64], &[f64]) {
        let off = self.shape.last_layer_offset();
        let k = self.shape.classes;
        let h = self.shape.penultimate_width();
        let w = &self.values[off..off + k * h];
        (w, &self.values[off + k * h..off + k * h + k])
    }

    /// Input of the last linear layer.
    pub fn penultimate(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).penultimate
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let s = &self.shape;
        let (hidden_pre, penultimate) = match s.architecture {
            Architecture::Logistic => (Vec::new(), x.to_vec()),
            Architecture::Mlp => {
                let w1 = &self.values[..s.hidden * s.input_dim];
                let b1 = &self.values[s.hidden * s.input_dim..s.hidden * s.input_dim + s.hidden];
                let pre: Vec<f64> = (0..s.hidden)
                    .map(|r| dot(&w1[r * s.input_dim..(r + 1) * s.input_dim], x) + b1[r])
                    .collect();
                let act = pre.iter().map(|&v| v.max(0.0)).collect();
                (pre, act)
            }
        };
        let logits = self.logits_from(&penultimate);
        Forward {
            hidden_pre,
            penultimate,
            probs: softmax(&logits),
        }
    }

    fn logits_from(&self, a: &[f64]) -> Vec<f64> {
        let (w, b) = self.last_layer();
        let h = a.len();
        (0..self.shape.classes)
            .map(|c| dot(&w[c * h..(c + 1) * h], a) + b[c])
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let a = self.penultimate(x);
        self.logits_from(&a)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        cross_entropy(&self.logits(x), label)
    }

    /// Mean cross-entropy over a dataset.
    pub fn mean_loss(&self, data: &Dataset) -> f64 {
        (0..data.len())
            .map(|i| self.loss(data.row(i), data.label(i)))
            .sum::<f64>()
            / data.len() as f64
    }

    /// Add the gradient of the loss on one sample into `grad` (full parameter
    /// layout) and return the loss.
    fn accumulate_gradient(&self, x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let s = self.shape;
        let fw = self.forward(x);
        let k = s.classes;
        let h = s.penultimate_width();
        let mut delta = fw.probs.clone();
        delta[label] -= 1.0;
        let loss = -fw.probs[label].max(f64::MIN_POSITIVE).ln();

        let off = s.last_layer_offset();
        for c in 0..k {
            let row = &mut grad[off + c * h..off + (c + 1) * h];
            for (g, a) in row.iter_mut().zip(&fw.penultimate) {
                *g += delta[c] * a;
            }
            grad[off + k * h + c] += delta[c];
        }
        if s.architecture == Architecture::Mlp {
            let (w2, _) = self.last_layer();
            let d = s.input_dim;
            for r in 0..s.hidden {
                if fw.hidden_pre[r] <= 0.0 {
                    continue;
                }
                let back: f64 = (0..k).map(|c| w2[c * h + r] * delta[c]).sum();
                let row = &mut grad[r * d..(r + 1) * d];
                for (g, xv) in row.iter_mut().zip(x) {
                    *g += back * xv;
                }
                grad[s.hidden * d + r] += back;
            }
        }
        loss
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-sample gradient of the loss with respect to the last linear layer,
/// stored as `k` rows of `h + 1` values (weights, then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerGradient {
    /// `softmax(z) - onehot(y)`, one entry per class.
    pub delta: Vec<f64>,
    /// Input of the last layer (`h` values).
    pub activation: Vec<f64>,
}

impl LastLayerGradient {
    pub fn classes(&self) -> usize {
        self.delta.len()
    }

    pub fn width(&self) -> usize {
        self.activation.len() + 1
    }

    pub fn get(&self, class: usize, col: usize) -> f64 {
        let a = if col == self.activation.len() {
            1.0
        } else {
            self.activation[col]
        };
        self.delta[class] * a
    }

    /// Row-major `k x (h + 1)` matrix.
    pub fn to_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.classes() * self.width());
        for &d in &self.delta {
            out.extend(self.activation.iter().map(|a| d * a));
            out.push(d);
        }
        out
    }

    /// Inner product of the flattened gradients, using
    /// `<d1 ⊗ a1, d2 ⊗ a2> = (d1·d2)(a1·a2 + 1)`.
    pub fn dot(&self, other: &LastLayerGradient) -> f64 {
        dot(&self.delta, &other.delta) * (dot(&self.activation, &other.activation) + 1.0)
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }
}

/// Closed-form last-layer gradient of the cross-entropy loss on one sample.
pub fn last_layer_gradient(params: &Params, features: &[f64], label: usize) -> Result<LastLayerGradient> {
    if label >= params.shape.classes {
        return Err(Error::invalid(format!(
            "label {label} outside 0..{}",
            params.shape.classes
        )));
    }
    if features.len() != params.shape.input_dim {
        return Err(Error::invalid(format!(
            "sample has {} features, model expects {}",
            features.len(),
            params.shape.input_dim
        )));
    }
    let fw = params.forward(features);
    if fw.penultimate.iter().any(|v| !v.is_finite()) || fw.probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("last-layer activation".into()));
    }
    let mut delta = fw.probs;
    delta[label] -= 1.0;
    Ok(LastLayerGradient {
        delta,
        activation: fw.penultimate,
    })
}

/// One epoch-start snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: Params,
    pub learning_rate: f64,
    /// Batch index of every training sample, aligned with the trail's ids.
    pub batch_of: Vec<u32>,
}

impl Checkpoint {
    /// Size of every batch of this epoch, indexed by batch.
    pub fn batch_sizes(&self) -> Vec<usize> {
        let n_batches = self.batch_of.iter().map(|&b| b as usize + 1).max().unwrap_or(0);
        let mut sizes = vec![0; n_batches];
        for &b in &self.batch_of {
            sizes[b as usize] += 1;
        }
        sizes
    }

    /// Rows of each batch in ascending order.
    pub fn batches(&self) -> Vec<Vec<usize>> {
        let mut batches = vec![Vec::new(); self.batch_sizes().len()];
        for (row, &b) in self.batch_of.iter().enumerate() {
            batches[b as usize].push(row);
        }
        batches
    }
}

/// Everything TracIn needs from a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTrail {
    pub train_ids: Vec<SampleId>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_params: Params,
    /// Mean training loss of every epoch (not persisted).
    pub epoch_losses: Vec<f64>,
}

impl CheckpointTrail {
    pub fn shape(&self) -> Shape {
        self.final_params.shape
    }

    pub fn epochs(&self) -> usize {
        self.checkpoints.len()
    }

    /// Copy of the trail with every recorded learning rate multiplied by `c`.
    pub fn with_scaled_learning_rates(&self, c: f64) -> CheckpointTrail {
        let mut out = self.clone();
        for cp in &mut out.checkpoints {
            cp.learning_rate *= c;
        }
        out
    }

    /// Check the structural invariants of the trail.
    pub fn validate(&self) -> Result<()> {
        let n = self.train_ids.len();
        for (t, cp) in self.checkpoints.iter().enumerate() {
            if cp.epoch != t {
                return Err(Error::Format {
                    what: "checkpoint trail",
                    message: format!("checkpoint {t} is labelled epoch {}", cp.epoch),
                });
            }
            if !(cp.learning_rate > 0.0) {
                return Err(Error::Format {
                    what: "checkpoint trail",
                    message: format!("non-positive learning rate at epoch {t}"),
                });
            }
            if cp.batch_of.len() != n {
                return Err(Error::Format {
                    what: "checkpoint trail",
                    message: format!("epoch {t} assigns {} of {n} samples", cp.batch_of.len()),
                });
            }
            if cp.params.shape != self.final_params.shape {
                return Err(Error::Format {
                    what: "checkpoint trail",
                    message: format!("epoch {t} has a different parameter shape"),
                });
            }
        }
        Ok(())
    }

    /// Check that `data` holds the trail's samples in the trail's order.
    pub fn check_ids(&self, data: &Dataset) -> Result<()> {
        if data.ids() != self.train_ids.as_slice() {
            return Err(Error::IdMismatch(format!(
                "trail covers {} training samples, dataset has {} (or a different order)",
                self.train_ids.len(),
                data.len()
            )));
        }
        Ok(())
    }
}

/// Apply one epoch of SGD over the given batches (rows within a batch in
/// ascending order). Returns the mean training loss.
fn sgd_epoch(params: &mut Params, data: &Dataset, batches: &[Vec<usize>], lr: f64) -> f64 {
    let mut grad = vec![0.0; params.values.len()];
    let mut total = 0.0;
    for batch in batches {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &row in batch {
            total += params.accumulate_gradient(data.row(row), data.label(row), &mut grad);
        }
        let step = lr / batch.len() as f64;
        for (p, g) in params.values.iter_mut().zip(&grad) {
            *p -= step * g;
        }
    }
    total / data.len() as f64
}

/// Train with minibatch SGD, recording a checkpoint at the start of every epoch.
pub fn train(data: &Dataset, config: &ModelConfig) -> Result<CheckpointTrail> {
    config.validate()?;
    if config.batch_size > data.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds training set size {}",
            config.batch_size,
            data.len()
        )));
    }
    let shape = Shape {
        architecture: config.architecture,
        input_dim: data.dims(),
        hidden: match config.architecture {
            Architecture::Logistic => 0,
            Architecture::Mlp => config.hidden_units,
        },
        classes: data.class_count(),
    };
    let mut params = Params::init(shape, config.seed);
    let mut rng = seeded(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut checkpoints = Vec::with_capacity(config.epochs);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut batch_of = vec![0u32; data.len()];
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            for &row in chunk {
                batch_of[row] = b as u32;
            }
        }
        let cp = Checkpoint {
            epoch,
            params: params.clone(),
            learning_rate: config.learning_rate_at(epoch),
            batch_of,
        };
        let loss = sgd_epoch(&mut params, data, &cp.batches(), cp.learning_rate);
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("loss {loss}, learning rate {}", cp.learning_rate),
            });
        }
        epoch_losses.push(loss);
        checkpoints.push(cp);
    }
    Ok(CheckpointTrail {
        train_ids: data.ids().to_vec(),
        checkpoints,
        final_params: params,
        epoch_losses,
    })
}

/// Re-run the recorded updates from the first checkpoint and return the
/// resulting parameters.
pub fn replay(trail: &CheckpointTrail, data: &Dataset) -> Result<Params> {
    trail.check_ids(data)?;
    let first = trail
        .checkpoints
        .first()
        .ok_or_else(|| Error::invalid("empty trail"))?;
    let mut params = first.params.clone();
    for cp in &trail.checkpoints {
        sgd_epoch(&mut params, data, &cp.batches(), cp.learning_rate);
    }
    Ok(params)
}

/// Accuracy of the final parameters over `data`, or over the listed ids only.
pub fn evaluate_accuracy(
    trail: &CheckpointTrail,
    data: &Dataset,
    subset: Option<&[SampleId]>,
) -> Result<f64> {
    let rows: Vec<usize> = match subset {
        None => (0..data.len()).collect(),
        Some(ids) => {
            let index = data.index_map();
            ids.iter()
                .map(|id| {
                    index
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::IdMismatch(format!("sample {id} not in dataset")))
                })
                .collect::<Result<_>>()?
        }
    };
    if rows.is_empty() {
        return Err(Error::invalid("accuracy over an empty subset"));
    }
    let params = &trail.final_params;
    if params.shape.input_dim != data.dims() {
        return Err(Error::invalid("model and dataset dimensionality differ"));
    }
    let correct = rows
        .iter()
        .filter(|&&r| params.predict(data.row(r)) == data.label(r))
        .count();
    Ok(correct as f64 / rows.len() as f64)
}

// Binary trail container, all integers and floats little-endian:
//
//   magic        8 bytes  "INFTRAIL"
//   version      u32      1
//   architecture u8       0 = logistic, 1 = mlp
//   input_dim    u32
//   hidden       u32      0 for logistic
//   classes      u32
//   epochs       u32      T
//   n            u64      training samples
//   ids          n x u64
//   params       u64      P
//   T records:   epoch u32, learning rate f64, P x f64 parameters, n x u32 batch index
//   final        P x f64
const TRAIL_MAGIC: &[u8; 8] = b"INFTRAIL";
const TRAIL_VERSION: u32 = 1;

pub(crate) struct LeWriter<W: Write>(pub W);

impl<W: Write> LeWriter<W> {
    pub fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    pub fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.0.write_all(&[v])
    }
    pub fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    pub fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    pub fn f64s(&mut self, v: &[f64]) -> std::io::Result<()> {
        for x in v {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

pub(crate) struct LeReader<R: Read>(pub R);

impl<R: Read> LeReader<R> {
    pub fn array<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    pub fn u8(&mut self) -> std::io::Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    pub fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    pub fn f64s(&mut self, n: usize) -> std::io::Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl CheckpointTrail {
    pub fn write_to(&self, w: impl Write) -> std::io::Result<()> {
        let mut w = LeWriter(std::io::BufWriter::new(w));
        let s = self.shape();
        w.bytes(TRAIL_MAGIC)?;
        w.u32(TRAIL_VERSION)?;
        w.u8(match s.architecture {
            Architecture::Logistic => 0,
            Architecture::Mlp => 1,
        })?;
        w.u32(s.input_dim as u32)?;
        w.u32(s.hidden as u32)?;
        w.u32(s.classes as u32)?;
        w.u32(self.checkpoints.len() as u32)?;
        w.u64(self.train_ids.len() as u64)?;
        for &id in &self.train_ids {
            w.u64(id)?;
        }
        w.u64(s.param_count() as u64)?;
        for cp in &self.checkpoints {
            w.u32(cp.epoch as u32)?;
            w.f64s(&[cp.learning_rate])?;
            w.f64s(&cp.params.values)?;
            for &b in &cp.batch_of {
                w.u32(b)?;
            }
        }
        w.f64s(&self.final_params.values)?;
        w.0.flush()
    }

    pub fn read_from(r: impl Read) -> Result<CheckpointTrail> {
        let bad = |message: String| Error::Format {
            what: "checkpoint trail",
            message,
        };
        let io = |e: std::io::Error| bad(format!("truncated or unreadable: {e}"));
        let mut r = LeReader(std::io::BufReader::new(r));
        if &r.array::<8>().map_err(io)? != TRAIL_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().map_err(io)?;
        if version != TRAIL_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let architecture = match r.u8().map_err(io)? {
            0 => Architecture::Logistic,
            1 => Architecture::Mlp,
            other => return Err(bad(format!("unknown architecture tag {other}"))),
        };
        let input_dim = r.u32().map_err(io)? as usize;
        let hidden = r.u32().map_err(io)? as usize;
        let classes = r.u32().map_err(io)? as usize;
        let epochs = r.u32().map_err(io)? as usize;
        let n = r.u64().map_err(io)? as usize;
        let train_ids = (0..n).map(|_| r.u64()).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
        let shape = Shape {
            architecture,
            input_dim,
            hidden,
            classes,
        };
        let p = r.u64().map_err(io)? as usize;
        if p != shape.param_count() {
            return Err(bad(format!(
                "{p} parameters recorded, shape implies {}",
                shape.param_count()
            )));
        }
        let mut checkpoints = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = r.u32().map_err(io)? as usize;
            let learning_rate = r.f64().map_err(io)?;
            let values = r.f64s(p).map_err(io)?;
            let batch_of = (0..n).map(|_| r.u32()).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
            checkpoints.push(Checkpoint {
                epoch,
                params: Params { shape, values },
                learning_rate,
                batch_of,
            });
        }
        let final_params = Params {
            shape,
            values: r.f64s(p).map_err(io)?,
        };
        let trail = CheckpointTrail {
            train_ids,
            checkpoints,
            final_params,
            epoch_losses: Vec::new(),
        };
        trail.validate()?;
        Ok(trail)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(f).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<CheckpointTrail> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    #[test]
    fn uniform_softmax_gradient() {
        let params = Params {
            shape: Shape {
                architecture: Architecture::Logistic,
                input_dim: 1,
                hidden: 0,
                classes: 2,
            },
            values: vec![0.0; 4],
        };
        let g = last_layer_gradient(&params, &[1.0], 0).unwrap();
        assert_eq!(g.to_matrix(), vec![-0.5, -0.5, 0.5, 0.5]);
    }

    #[test]
    fn confident_prediction_has_vanishing_gradient() {
        let params = Params {
            shape: Shape {
                architecture: Architecture::Logistic,
                input_dim: 1,
                hidden: 0,
                classes: 2,
            },
            values: vec![40.0, -40.0, 0.0, 0.0],
        };
        let g = last_layer_gradient(&params, &[1.0], 0).unwrap();
        assert!(g.norm_squared().sqrt() < 1e-30);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let data = make_blobs(30, 3, 3, 2.0, 1).unwrap();
        let trail = train(&data, &ModelConfig::mlp(5, 0.1, 2, 8, 2)).unwrap();
        for cp in &trail.checkpoints {
            for i in 0..data.len() {
                let g = last_layer_gradient(&cp.params, data.row(i), data.label(i)).unwrap();
                let m = g.to_matrix();
                for col in 0..g.width() {
                    let s: f64 = (0..g.classes()).map(|c| m[c * g.width() + col]).sum();
                    assert!(s.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn vanishing_learning_rate_keeps_initial_parameters() {
        let data = make_blobs(20, 2, 2, 5.0, 0).unwrap();
        let trail = train(&data, &ModelConfig::logistic(1e-12, 1, 4, 0)).unwrap();
        for (a, b) in trail.final_params.values.iter().zip(&trail.checkpoints[0].params.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = make_blobs(200, 2, 2, 10.0, 3).unwrap();
        let trail = train(&data, &ModelConfig::logistic(0.1, 20, 16, 3)).unwrap();
        assert!(evaluate_accuracy(&trail, &data, None).unwrap() >= 0.99);
    }

    #[test]
    fn training_is_deterministic_and_replayable() {
        let data = make_blobs(50, 3, 3, 3.0, 5).unwrap();
        let cfg = ModelConfig::mlp(8, 0.2, 4, 7, 9);
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(replay(&a, &data).unwrap(), a.final_params);
        assert_eq!(a.epochs(), 4);
        for (t, cp) in a.checkpoints.iter().enumerate() {
            assert_eq!(cp.epoch, t);
            assert_eq!(cp.batch_sizes().iter().sum::<usize>(), 50);
        }
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data = make_blobs(20, 2, 2, 5.0, 0).unwrap().affine(1e150, 0.0).unwrap();
        let err = train(&data, &ModelConfig::logistic(1e10, 3, 20, 0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn config_guards() {
        let data = make_blobs(20, 2, 2, 5.0, 0).unwrap();
        assert!(train(&data, &ModelConfig::logistic(0.0, 1, 4, 0)).is_err());
        assert!(train(&data, &ModelConfig::logistic(0.1, 0, 4, 0)).is_err());
        assert!(train(&data, &ModelConfig::logistic(0.1, 1, 21, 0)).is_err());
        assert!(train(&data, &ModelConfig::mlp(0, 0.1, 1, 4, 0)).is_err());
    }

    #[test]
    fn accuracy_subsets() {
        let data = make_blobs(40, 2, 2, 10.0, 1).unwrap();
        let trail = train(&data, &ModelConfig::logistic(0.1, 10, 8, 1)).unwrap();
        let correct = (0..data.len())
            .find(|&i| trail.final_params.predict(data.row(i)) == data.label(i))
            .unwrap();
        assert_eq!(evaluate_accuracy(&trail, &data, Some(&[data.id(correct)])).unwrap(), 1.0);
        assert!(evaluate_accuracy(&trail, &data, Some(&[])).is_err());
        assert!(evaluate_accuracy(&trail, &data, Some(&[9999])).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let data = make_blobs(30, 3, 3, 3.0, 2).unwrap();
        let trail = train(&data, &ModelConfig::mlp(4, 0.1, 3, 8, 2)).unwrap();
        let mut buf = Vec::new();
        trail.write_to(&mut buf).unwrap();
        let back = CheckpointTrail::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.checkpoints, trail.checkpoints);
        assert_eq!(back.final_params, trail.final_params);
        assert!(CheckpointTrail::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
