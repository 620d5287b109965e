//! Trainable classifiers: a linear-softmax model and a one-hidden-layer MLP.
//!
//! Both models expose the same [`Classifier`] surface — forward
//! probabilities, flattened parameters, and analytic batch gradients — so the
//! plain-SGD [`train`] loop, [`cross_entropy_loss`], and [`gradient_check`]
//! work on either. All randomness (parameter init, epoch shuffling) comes
//! from a ChaCha8 stream seeded explicitly, so identical seeds give
//! bit-identical models.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard deviation of the Gaussian used for weight initialization.
const INIT_STD: f64 = 0.01;

/// Probabilities are clamped to at least this before taking logs.
const PROB_FLOOR: f64 = 1e-12;

/// One training example: a feature vector and its class label.
pub type Example = (Vec<f64>, usize);

/// Errors from model construction, training, and checkpoints.
#[derive(Debug, Error)]
pub enum ModelError {
    /// A vector or matrix with the wrong size for this model.
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A label outside `0..num_classes`.
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    /// Nothing to train or evaluate on.
    #[error("dataset is empty")]
    EmptyDataset,
    /// A structurally impossible model or training configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// Training produced a non-finite loss; usually the learning rate.
    #[error("training diverged at epoch {epoch}: non-finite loss at learning rate {learning_rate:e}")]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },
    /// A checkpoint whose contents contradict its declared shape.
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    /// Underlying reader or writer failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Common surface of the trainable models.
pub trait Classifier {
    /// Size of the output distribution.
    fn num_classes(&self) -> usize;
    /// Expected feature vector length.
    fn feature_dim(&self) -> usize;
    /// Class probabilities for one feature vector.
    fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, ModelError>;
    /// Total number of scalar parameters.
    fn param_count(&self) -> usize;
    /// All parameters, flattened in a fixed documented order.
    fn params(&self) -> Vec<f64>;
    /// Replaces all parameters from a flat vector.
    fn set_params(&mut self, flat: &[f64]) -> Result<(), ModelError>;
    /// Mean loss and flattened loss gradient over a batch.
    fn batch_gradient(&self, batch: &[Example]) -> Result<(f64, Vec<f64>), ModelError>;
}

/// Softmax over max-shifted logits, in place.
fn softmax(z: &mut Array1<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    z.mapv_inplace(|v| (v - max).exp());
    let sum = z.sum();
    *z /= sum;
}

/// Negative log likelihood of `label`, with the probability floored.
///
/// The floor is applied by comparison rather than `f64::max` so that a NaN
/// probability (diverged parameters) propagates instead of being clamped to
/// a finite loss.
fn floored_nll(p: f64) -> f64 {
    if p < PROB_FLOOR {
        -PROB_FLOOR.ln()
    } else {
        -p.ln()
    }
}

fn nll(probs: &Array1<f64>, label: usize) -> f64 {
    floored_nll(probs[label])
}

fn features_array(model: &impl Classifier, features: &[f64]) -> Result<Array1<f64>, ModelError> {
    if features.len() != model.feature_dim() {
        return Err(ModelError::DimensionMismatch {
            what: "feature vector length",
            expected: model.feature_dim(),
            got: features.len(),
        });
    }
    Ok(Array1::from_vec(features.to_vec()))
}

fn check_label(model: &impl Classifier, label: usize) -> Result<(), ModelError> {
    if label >= model.num_classes() {
        return Err(ModelError::LabelOutOfRange {
            label,
            num_classes: model.num_classes(),
        });
    }
    Ok(())
}

/// Gaussian(0, [`INIT_STD`]) matrix drawn row-major from `rng`.
fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("constant std is valid");
    Array2::from_shape_fn((rows, cols), |_| rng.sample(normal))
}

fn validate_dims(num_classes: usize, feature_dim: usize) -> Result<(), ModelError> {
    if num_classes < 2 {
        return Err(ModelError::InvalidConfig(format!(
            "a classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    if feature_dim == 0 {
        return Err(ModelError::InvalidConfig("feature_dim must be positive".into()));
    }
    Ok(())
}

/// Multinomial logistic regression: `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxModel {
    weights: Array2<f64>, // num_classes x feature_dim
    biases: Array1<f64>,  // num_classes
}

impl LinearSoftmaxModel {
    /// Fresh model: weights ~ Gaussian(0, 0.01) from `seed`, zero biases.
    pub fn init(num_classes: usize, feature_dim: usize, seed: u64) -> Result<Self, ModelError> {
        validate_dims(num_classes, feature_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            weights: init_matrix(&mut rng, num_classes, feature_dim),
            biases: Array1::zeros(num_classes),
        })
    }

    /// Rebuilds a model from explicit parameters, validating shapes.
    pub fn from_parts(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self, ModelError> {
        let num_classes = weights.len();
        let feature_dim = weights.first().map_or(0, Vec::len);
        validate_dims(num_classes, feature_dim)?;
        if weights.iter().any(|row| row.len() != feature_dim) {
            return Err(ModelError::InvalidCheckpoint("ragged weight matrix".into()));
        }
        if biases.len() != num_classes {
            return Err(ModelError::DimensionMismatch {
                what: "bias vector length",
                expected: num_classes,
                got: biases.len(),
            });
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        Ok(Self {
            weights: Array2::from_shape_vec((num_classes, feature_dim), flat)
                .expect("shape checked above"),
            biases: Array1::from_vec(biases),
        })
    }

    fn logits(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weights.dot(x) + &self.biases
    }
}

impl Classifier for LinearSoftmaxModel {
    fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        let x = features_array(self, features)?;
        let mut z = self.logits(&x);
        softmax(&mut z);
        Ok(z.to_vec())
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn params(&self) -> Vec<f64> {
        // Order: weights row-major, then biases.
        self.weights.iter().chain(self.biases.iter()).copied().collect()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.param_count() {
            return Err(ModelError::DimensionMismatch {
                what: "flat parameter length",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let (w, b) = flat.split_at(self.weights.len());
        self.weights
            .iter_mut()
            .zip(w)
            .for_each(|(dst, src)| *dst = *src);
        self.biases
            .iter_mut()
            .zip(b)
            .for_each(|(dst, src)| *dst = *src);
        Ok(())
    }

    fn batch_gradient(&self, batch: &[Example]) -> Result<(f64, Vec<f64>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut grad_w: Array2<f64> = Array2::zeros(self.weights.raw_dim());
        let mut grad_b: Array1<f64> = Array1::zeros(self.biases.raw_dim());
        let mut loss = 0.0;
        for (features, label) in batch {
            check_label(self, *label)?;
            let x = features_array(self, features)?;
            let mut p = self.logits(&x);
            softmax(&mut p);
            loss += nll(&p, *label);
            // d loss / d logits = p - one_hot(label)
            p[*label] -= 1.0;
            for (mut row, &dz) in grad_w.rows_mut().into_iter().zip(p.iter()) {
                row.scaled_add(dz, &x);
            }
            grad_b += &p;
        }
        let scale = 1.0 / batch.len() as f64;
        grad_w *= scale;
        grad_b *= scale;
        let flat: Vec<f64> = grad_w.iter().chain(grad_b.iter()).copied().collect();
        Ok((loss * scale, flat))
    }
}

/// One-hidden-layer MLP: `softmax(W2 tanh(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    hidden_weights: Array2<f64>, // hidden_dim x feature_dim
    hidden_biases: Array1<f64>,  // hidden_dim
    head_weights: Array2<f64>,   // num_classes x hidden_dim
    head_biases: Array1<f64>,    // num_classes
}

impl MlpModel {
    /// Fresh model: weights ~ Gaussian(0, 0.01) from `seed` (hidden layer
    /// drawn first, then the head), zero biases.
    pub fn init(
        num_classes: usize,
        feature_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        validate_dims(num_classes, feature_dim)?;
        if hidden_dim == 0 {
            return Err(ModelError::InvalidConfig("hidden_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden_weights = init_matrix(&mut rng, hidden_dim, feature_dim);
        let head_weights = init_matrix(&mut rng, num_classes, hidden_dim);
        Ok(Self {
            hidden_weights,
            hidden_biases: Array1::zeros(hidden_dim),
            head_weights,
            head_biases: Array1::zeros(num_classes),
        })
    }

    /// Rebuilds a model from explicit parameters, validating shapes.
    pub fn from_parts(
        hidden_weights: Vec<Vec<f64>>,
        hidden_biases: Vec<f64>,
        head_weights: Vec<Vec<f64>>,
        head_biases: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let hidden_dim = hidden_weights.len();
        let feature_dim = hidden_weights.first().map_or(0, Vec::len);
        let num_classes = head_weights.len();
        validate_dims(num_classes, feature_dim)?;
        if hidden_dim == 0 {
            return Err(ModelError::InvalidConfig("hidden_dim must be positive".into()));
        }
        if hidden_weights.iter().any(|row| row.len() != feature_dim)
            || head_weights.iter().any(|row| row.len() != hidden_dim)
        {
            return Err(ModelError::InvalidCheckpoint("ragged weight matrix".into()));
        }
        if hidden_biases.len() != hidden_dim || head_biases.len() != num_classes {
            return Err(ModelError::InvalidCheckpoint("bias length mismatch".into()));
        }
        let hidden_flat: Vec<f64> = hidden_weights.into_iter().flatten().collect();
        let head_flat: Vec<f64> = head_weights.into_iter().flatten().collect();
        Ok(Self {
            hidden_weights: Array2::from_shape_vec((hidden_dim, feature_dim), hidden_flat)
                .expect("shape checked above"),
            hidden_biases: Array1::from_vec(hidden_biases),
            head_weights: Array2::from_shape_vec((num_classes, hidden_dim), head_flat)
                .expect("shape checked above"),
            head_biases: Array1::from_vec(head_biases),
        })
    }

    /// Width of the hidden layer.
    #[must_use]
    pub fn hidden_dim(&self) -> usize {
        self.hidden_weights.nrows()
    }

    /// Same hidden layer, new head over `num_classes` classes.
    ///
    /// The head weights are re-drawn Gaussian(0, 0.01) from `seed` and its
    /// biases zeroed, exactly as in [`MlpModel::init`].
    pub fn swap_head(&self, num_classes: usize, seed: u64) -> Result<Self, ModelError> {
        if num_classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            hidden_weights: self.hidden_weights.clone(),
            hidden_biases: self.hidden_biases.clone(),
            head_weights: init_matrix(&mut rng, num_classes, self.hidden_dim()),
            head_biases: Array1::zeros(num_classes),
        })
    }

    fn hidden_activation(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut a = self.hidden_weights.dot(x) + &self.hidden_biases;
        a.mapv_inplace(f64::tanh);
        a
    }
}

impl Classifier for MlpModel {
    fn num_classes(&self) -> usize {
        self.head_weights.nrows()
    }

    fn feature_dim(&self) -> usize {
        self.hidden_weights.ncols()
    }

    fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        let x = features_array(self, features)?;
        let a = self.hidden_activation(&x);
        let mut z = self.head_weights.dot(&a) + &self.head_biases;
        softmax(&mut z);
        Ok(z.to_vec())
    }

    fn param_count(&self) -> usize {
        self.hidden_weights.len()
            + self.hidden_biases.len()
            + self.head_weights.len()
            + self.head_biases.len()
    }

    fn params(&self) -> Vec<f64> {
        // Order: hidden weights row-major, hidden biases, head weights
        // row-major, head biases.
        self.hidden_weights
            .iter()
            .chain(self.hidden_biases.iter())
            .chain(self.head_weights.iter())
            .chain(self.head_biases.iter())
            .copied()
            .collect()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.param_count() {
            return Err(ModelError::DimensionMismatch {
                what: "flat parameter length",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for dst in [
            self.hidden_weights.iter_mut().collect::<Vec<_>>(),
            self.hidden_biases.iter_mut().collect(),
            self.head_weights.iter_mut().collect(),
            self.head_biases.iter_mut().collect(),
        ] {
            let (chunk, tail) = rest.split_at(dst.len());
            rest = tail;
            for (d, s) in dst.into_iter().zip(chunk) {
                *d = *s;
            }
        }
        Ok(())
    }

    fn batch_gradient(&self, batch: &[Example]) -> Result<(f64, Vec<f64>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut grad_w1: Array2<f64> = Array2::zeros(self.hidden_weights.raw_dim());
        let mut grad_b1: Array1<f64> = Array1::zeros(self.hidden_biases.raw_dim());
        let mut grad_w2: Array2<f64> = Array2::zeros(self.head_weights.raw_dim());
        let mut grad_b2: Array1<f64> = Array1::zeros(self.head_biases.raw_dim());
        let mut loss = 0.0;
        for (features, label) in batch {
            check_label(self, *label)?;
            let x = features_array(self, features)?;
            let a = self.hidden_activation(&x);
            let mut p = self.head_weights.dot(&a) + &self.head_biases;
            softmax(&mut p);
            loss += nll(&p, *label);
            p[*label] -= 1.0; // now d loss / d head logits
            for (mut row, &dz) in grad_w2.rows_mut().into_iter().zip(p.iter()) {
                row.scaled_add(dz, &a);
            }
            grad_b2 += &p;
            // Backprop through tanh: da = W2^T dz, dz1 = da * (1 - a^2).
            let da = self.head_weights.t().dot(&p);
            let dz1 = &da * &a.mapv(|v| 1.0 - v * v);
            for (mut row, &d) in grad_w1.rows_mut().into_iter().zip(dz1.iter()) {
                row.scaled_add(d, &x);
            }
            grad_b1 += &dz1;
        }
        let scale = 1.0 / batch.len() as f64;
        for g in [&mut grad_w1, &mut grad_w2] {
            *g *= scale;
        }
        for g in [&mut grad_b1, &mut grad_b2] {
            *g *= scale;
        }
        let flat: Vec<f64> = grad_w1
            .iter()
            .chain(grad_b1.iter())
            .chain(grad_w2.iter())
            .chain(grad_b2.iter())
            .copied()
            .collect();
        Ok((loss * scale, flat))
    }
}

/// Settings for plain SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the epoch-shuffling stream.
    pub seed: u64,
    /// When false, batches walk the dataset in its given order.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// Rejects configurations that cannot run.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(ModelError::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Same config with another seed.
    #[must_use]
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Loss trace of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the full dataset after each epoch.
    pub epoch_losses: Vec<f64>,
    /// The last entry of `epoch_losses`.
    pub final_loss: f64,
}

/// Mean cross-entropy of `model` on `data`.
pub fn cross_entropy_loss<M: Classifier>(model: &M, data: &[Example]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut total = 0.0;
    for (features, label) in data {
        check_label(model, *label)?;
        let probs = model.probabilities(features)?;
        total += floored_nll(probs[*label]);
    }
    Ok(total / data.len() as f64)
}

/// Most probable class; ties go to the lowest class id.
pub fn predict<M: Classifier>(model: &M, features: &[f64]) -> Result<usize, ModelError> {
    let probs = model.probabilities(features)?;
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Trains `model` in place with plain mini-batch SGD.
///
/// The model keeps its current parameters as the starting point; callers
/// wanting a fresh start initialize one first. After every epoch the mean
/// loss over the whole dataset (in its original order) is recorded; a
/// non-finite value aborts with [`ModelError::NonFiniteLoss`].
pub fn train<M: Classifier>(
    model: &mut M,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for (features, label) in data {
        check_label(model, *label)?;
        if features.len() != model.feature_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "feature vector length",
                expected: model.feature_dim(),
                got: features.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = model.params();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch: Vec<Example> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (_, grad) = model.batch_gradient(&batch)?;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            model.set_params(&params)?;
        }
        let loss = cross_entropy_loss(model, data)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        epoch_losses.push(loss);
    }

    let final_loss = *epoch_losses.last().expect("epochs >= 1");
    Ok(TrainReport {
        epoch_losses,
        final_loss,
    })
}

/// Compares analytic batch gradients against central finite differences.
///
/// Returns the worst relative error over all parameters, where the relative
/// error of analytic `a` vs numeric `n` is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check<M: Classifier + Clone>(
    model: &M,
    batch: &[Example],
    epsilon: f64,
) -> Result<f64, ModelError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ModelError::InvalidConfig(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let (_, analytic) = model.batch_gradient(batch)?;
    let base = model.params();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut params = base.clone();
        params[i] = base[i] + epsilon;
        probe.set_params(&params)?;
        let plus = cross_entropy_loss(&probe, batch)?;
        params[i] = base[i] - epsilon;
        probe.set_params(&params)?;
        let minus = cross_entropy_loss(&probe, batch)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Serialized model parameters, tagged by model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum ModelData {
    LinearSoftmax {
        num_classes: usize,
        feature_dim: usize,
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
    Mlp {
        num_classes: usize,
        feature_dim: usize,
        hidden_dim: usize,
        hidden_weights: Vec<Vec<f64>>,
        hidden_biases: Vec<f64>,
        head_weights: Vec<Vec<f64>>,
        head_biases: Vec<f64>,
    },
}

/// Either trainable model, for checkpoints and generic pipelines.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Linear(LinearSoftmaxModel),
    Mlp(MlpModel),
}

impl AnyModel {
    /// The checkpoint tag for this model.
    #[must_use]
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Linear(_) => "linear-softmax",
            AnyModel::Mlp(_) => "mlp",
        }
    }

    /// Borrow as MLP, when it is one.
    #[must_use]
    pub fn as_mlp(&self) -> Option<&MlpModel> {
        match self {
            AnyModel::Mlp(m) => Some(m),
            AnyModel::Linear(_) => None,
        }
    }
}

impl From<LinearSoftmaxModel> for AnyModel {
    fn from(m: LinearSoftmaxModel) -> Self {
        AnyModel::Linear(m)
    }
}

impl From<MlpModel> for AnyModel {
    fn from(m: MlpModel) -> Self {
        AnyModel::Mlp(m)
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Linear($m) => $body,
            AnyModel::Mlp($m) => $body,
        }
    };
}

impl Classifier for AnyModel {
    fn num_classes(&self) -> usize {
        delegate!(self, m => m.num_classes())
    }

    fn feature_dim(&self) -> usize {
        delegate!(self, m => m.feature_dim())
    }

    fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        delegate!(self, m => m.probabilities(features))
    }

    fn param_count(&self) -> usize {
        delegate!(self, m => m.param_count())
    }

    fn params(&self) -> Vec<f64> {
        delegate!(self, m => m.params())
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        delegate!(self, m => m.set_params(flat))
    }

    fn batch_gradient(&self, batch: &[Example]) -> Result<(f64, Vec<f64>), ModelError> {
        delegate!(self, m => m.batch_gradient(batch))
    }
}

fn rows_to_vecs(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl From<&AnyModel> for ModelData {
    fn from(model: &AnyModel) -> Self {
        match model {
            AnyModel::Linear(m) => ModelData::LinearSoftmax {
                num_classes: m.num_classes(),
                feature_dim: m.feature_dim(),
                weights: rows_to_vecs(&m.weights),
                biases: m.biases.to_vec(),
            },
            AnyModel::Mlp(m) => ModelData::Mlp {
                num_classes: m.num_classes(),
                feature_dim: m.feature_dim(),
                hidden_dim: m.hidden_dim(),
                hidden_weights: rows_to_vecs(&m.hidden_weights),
                hidden_biases: m.hidden_biases.to_vec(),
                head_weights: rows_to_vecs(&m.head_weights),
                head_biases: m.head_biases.to_vec(),
            },
        }
    }
}

impl TryFrom<ModelData> for AnyModel {
    type Error = ModelError;

    fn try_from(data: ModelData) -> Result<Self, Self::Error> {
        let mismatch = |what: &'static str, expected: usize, got: usize| {
            ModelError::InvalidCheckpoint(format!("{what}: declared {expected}, found {got}"))
        };
        match data {
            ModelData::LinearSoftmax {
                num_classes,
                feature_dim,
                weights,
                biases,
            } => {
                if weights.len() != num_classes {
                    return Err(mismatch("weight rows", num_classes, weights.len()));
                }
                if weights.first().map_or(0, Vec::len) != feature_dim {
                    return Err(mismatch(
                        "weight columns",
                        feature_dim,
                        weights.first().map_or(0, Vec::len),
                    ));
                }
                Ok(AnyModel::Linear(LinearSoftmaxModel::from_parts(weights, biases)?))
            }
            ModelData::Mlp {
                num_classes,
                feature_dim,
                hidden_dim,
                hidden_weights,
                hidden_biases,
                head_weights,
                head_biases,
            } => {
                if hidden_weights.len() != hidden_dim {
                    return Err(mismatch("hidden weight rows", hidden_dim, hidden_weights.len()));
                }
                if hidden_weights.first().map_or(0, Vec::len) != feature_dim {
                    return Err(mismatch(
                        "hidden weight columns",
                        feature_dim,
                        hidden_weights.first().map_or(0, Vec::len),
                    ));
                }
                if head_weights.len() != num_classes {
                    return Err(mismatch("head weight rows", num_classes, head_weights.len()));
                }
                Ok(AnyModel::Mlp(MlpModel::from_parts(
                    hidden_weights,
                    hidden_biases,
                    head_weights,
                    head_biases,
                )?))
            }
        }
    }
}

/// A model on disk, together with how it came to be.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    /// Seed that initialized (or last trained) the model.
    pub seed: u64,
    /// Training settings, when the checkpoint came out of [`train`].
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    #[serde(flatten)]
    model: ModelData,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainConfig>,
}

impl Checkpoint {
    /// Writes the checkpoint as a single JSON document.
    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<(), ModelError> {
        let file = CheckpointFile {
            model: ModelData::from(&self.model),
            seed: self.seed,
            train_config: self.train_config,
        };
        let json = serde_json::to_string(&file).expect("checkpoints serialize infallibly");
        writer.write_all(json.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    /// Reads a checkpoint written by [`Checkpoint::write_json`].
    pub fn read_json<R: BufRead>(reader: R) -> Result<Self, ModelError> {
        let file: CheckpointFile = serde_json::from_reader(reader)
            .map_err(|e| ModelError::InvalidCheckpoint(e.to_string()))?;
        Ok(Self {
            model: AnyModel::try_from(file.model)?,
            seed: file.seed,
            train_config: file.train_config,
        })
    }
}
