//! Logistic-regression location classifier over embedding features.
//!
//! The objective is mean binary cross-entropy plus an L2 penalty,
//!
//! ```text
//! L(w, b) = -(1/N) Σ [y log σ(w·x + b) + (1 - y) log(1 - σ(w·x + b))] + λ‖w‖²
//! ```
//!
//! minimized by full-batch gradient descent from zero weights. Training is
//! sequential so that a given input always yields bit-identical weights.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::exec::Execution;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("degenerate training set: need at least one example of each label")]
    DegenerateTrainingSet,
    #[error("empty example set")]
    Empty,
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in features of example {0}")]
    NonFinite(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { learning_rate: 0.1, l2_lambda: 1e-4, epochs: 500 }
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub hyperparams: Hyperparams,
    pub trained_on: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Loss and gradient of the regularized objective at `(weights, bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_bias: f64,
}

pub fn loss(weights: &[f64], bias: f64, data: &[(EmbeddingVector, bool)], l2_lambda: f64) -> f64 {
    let n = data.len() as f64;
    let data_loss: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = dot(weights, x.values()) + bias;
            // -[y log σ(z) + (1-y) log(1-σ(z))] = softplus(z) - y z
            softplus(z) - if *y { z } else { 0.0 }
        })
        .sum::<f64>()
        / n;
    data_loss + l2_lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

pub fn loss_and_gradient(weights: &[f64], bias: f64, data: &[(EmbeddingVector, bool)], l2_lambda: f64) -> LossGradient {
    let n = data.len() as f64;
    let mut grad_weights = vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    let mut data_loss = 0.0;
    for (x, y) in data {
        let z = dot(weights, x.values()) + bias;
        let target = if *y { 1.0 } else { 0.0 };
        data_loss += softplus(z) - target * z;
        let residual = sigmoid(z) - target;
        for (g, xi) in grad_weights.iter_mut().zip(x.values()) {
            *g += residual * xi;
        }
        grad_bias += residual;
    }
    for (g, w) in grad_weights.iter_mut().zip(weights) {
        *g = *g / n + 2.0 * l2_lambda * w;
    }
    LossGradient {
        loss: data_loss / n + l2_lambda * weights.iter().map(|w| w * w).sum::<f64>(),
        grad_weights,
        grad_bias: grad_bias / n,
    }
}

fn validate(data: &[(EmbeddingVector, bool)]) -> Result<usize, ClassifierError> {
    let first = data.first().ok_or(ClassifierError::Empty)?;
    let dim = first.0.dim();
    for (idx, (x, _)) in data.iter().enumerate() {
        if x.dim() != dim {
            return Err(ClassifierError::DimensionMismatch { expected: dim, found: x.dim() });
        }
        if x.values().iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFinite(idx));
        }
    }
    Ok(dim)
}

/// Fits a model and returns it with the loss recorded before each epoch
/// and after the last one.
pub fn train_with_history(
    data: &[(EmbeddingVector, bool)],
    hyperparams: Hyperparams,
) -> Result<(LogisticModel, Vec<f64>), ClassifierError> {
    let dim = validate(data)?;
    let positives = data.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == data.len() {
        return Err(ClassifierError::DegenerateTrainingSet);
    }
    let usable = hyperparams.learning_rate > 0.0 && hyperparams.learning_rate.is_finite() && hyperparams.l2_lambda >= 0.0;
    if !usable {
        return Err(ClassifierError::InvalidHyperparams(format!("{hyperparams:?}")));
    }

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut history = Vec::with_capacity(hyperparams.epochs + 1);
    for _ in 0..hyperparams.epochs {
        let step = loss_and_gradient(&weights, bias, data, hyperparams.l2_lambda);
        history.push(step.loss);
        for (w, g) in weights.iter_mut().zip(&step.grad_weights) {
            *w -= hyperparams.learning_rate * g;
        }
        bias -= hyperparams.learning_rate * step.grad_bias;
    }
    history.push(loss(&weights, bias, data, hyperparams.l2_lambda));

    let model = LogisticModel { dim, weights, bias, threshold: DEFAULT_THRESHOLD, hyperparams, trained_on: data.len() };
    Ok((model, history))
}

pub fn train(data: &[(EmbeddingVector, bool)], hyperparams: Hyperparams) -> Result<LogisticModel, ClassifierError> {
    train_with_history(data, hyperparams).map(|(model, _)| model)
}

impl LogisticModel {
    fn check_dim(&self, x: &EmbeddingVector) -> Result<(), ClassifierError> {
        if x.dim() == self.dim {
            Ok(())
        } else {
            Err(ClassifierError::DimensionMismatch { expected: self.dim, found: x.dim() })
        }
    }

    /// Linear score `w·x + b`.
    pub fn decision(&self, x: &EmbeddingVector) -> Result<f64, ClassifierError> {
        self.check_dim(x)?;
        Ok(dot(&self.weights, x.values()) + self.bias)
    }

    pub fn predict_proba(&self, x: &EmbeddingVector) -> Result<f64, ClassifierError> {
        self.decision(x).map(sigmoid)
    }

    /// True when the predicted probability reaches the threshold.
    pub fn classify(&self, x: &EmbeddingVector) -> Result<bool, ClassifierError> {
        Ok(self.predict_proba(x)? >= self.threshold)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let err = |message: String| ClassifierError::ModelFile { path: path.display().to_string(), message };
        let mut text = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        text.push('\n');
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| err(e.to_string()))?;
        std::fs::write(tmp.path(), text).map_err(|e| err(e.to_string()))?;
        tmp.persist(path).map_err(|e| err(e.error.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let err = |message: String| ClassifierError::ModelFile { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let model: LogisticModel = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if model.weights.len() != model.dim {
            return Err(err(format!("{} weights for dimension {}", model.weights.len(), model.dim)));
        }
        if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
            return Err(err("non-finite weights".into()));
        }
        if !(model.threshold > 0.0 && model.threshold < 1.0) {
            return Err(err(format!("threshold {} outside (0, 1)", model.threshold)));
        }
        Ok(model)
    }
}

/// Confusion counts and derived metrics, with "location" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Rows are true labels (location, not location), columns predictions
    /// in the same order; each row divided by its total.
    pub normalized_confusion: [[f64; 2]; 2],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
            normalized_confusion: [[ratio(tp, tp + fn_), ratio(fn_, tp + fn_)], [ratio(fp, fp + tn), ratio(tn, fp + tn)]],
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Tallies predictions against gold labels.
pub fn evaluate_predictions(pairs: impl IntoIterator<Item = (bool, bool)>) -> EvalReport {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (predicted, gold) in pairs {
        match (predicted, gold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    EvalReport::from_counts(tp, fp, fn_, tn)
}

pub fn evaluate(model: &LogisticModel, testset: &[(EmbeddingVector, bool)]) -> Result<EvalReport, ClassifierError> {
    evaluate_with(model, testset, Execution::default())
}

pub fn evaluate_with(
    model: &LogisticModel,
    testset: &[(EmbeddingVector, bool)],
    exec: Execution,
) -> Result<EvalReport, ClassifierError> {
    if testset.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let predictions = exec.map(testset, |(x, gold)| model.classify(x).map(|p| (p, *gold)));
    let pairs = predictions.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(evaluate_predictions(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn model(weights: &[f64], bias: f64) -> LogisticModel {
        LogisticModel {
            dim: weights.len(),
            weights: weights.to_vec(),
            bias,
            threshold: DEFAULT_THRESHOLD,
            hyperparams: Hyperparams::default(),
            trained_on: 0,
        }
    }

    #[test]
    fn proba_examples() {
        assert_eq!(model(&[0.0, 0.0], 0.0).predict_proba(&v(&[3.0, -1.0])).unwrap(), 0.5);
        let p = model(&[0.0], 3f64.ln()).predict_proba(&v(&[1.0])).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
        let x = v(&[0.3, -0.2]);
        let mut last = 0.0;
        for b in [-2.0, -1.0, 0.0, 0.5, 3.0] {
            let p = model(&[1.0, 2.0], b).predict_proba(&x).unwrap();
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = model(&[0.0], 0.0);
        assert!(m.classify(&v(&[1.0])).unwrap());
        // σ(z) = 0.49
        let z = (0.49f64 / 0.51).ln();
        assert!(!model(&[0.0], z).classify(&v(&[1.0])).unwrap());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(-1000.0)).abs() < 1e-300);
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            model(&[1.0, 2.0], 0.0).predict_proba(&v(&[1.0])),
            Err(ClassifierError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn separable_pair() {
        let data = vec![(v(&[1.0, 0.0]), true), (v(&[0.0, 1.0]), false)];
        let (m, history) = train_with_history(&data, Hyperparams::default()).unwrap();
        assert!(m.classify(&data[0].0).unwrap());
        assert!(!m.classify(&data[1].0).unwrap());
        assert!(history.last().unwrap() <= history.first().unwrap());
        assert_eq!(m.trained_on, 2);
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![(v(&[1.0]), true), (v(&[2.0]), true)];
        assert!(matches!(train(&data, Hyperparams::default()), Err(ClassifierError::DegenerateTrainingSet)));
        assert!(matches!(train(&[], Hyperparams::default()), Err(ClassifierError::Empty)));
    }

    #[test]
    fn loss_is_non_increasing_with_small_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<_> = (0..40)
            .map(|i| {
                let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v = crate::embedding::l2_normalize(&EmbeddingVector::new(raw).unwrap());
                (v, i % 3 == 0)
            })
            .collect();
        let hp = Hyperparams { learning_rate: 1e-2, l2_lambda: 1e-4, epochs: 300 };
        let (_, history) = train_with_history(&data, hp).unwrap();
        for pair in history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = vec![(v(&[1.0, 0.2]), true), (v(&[0.1, 1.0]), false), (v(&[0.9, 0.4]), true)];
        assert_eq!(train(&data, Hyperparams::default()).unwrap(), train(&data, Hyperparams::default()).unwrap());
    }

    #[test]
    fn report_from_counts_matches_published_table() {
        let r = EvalReport::from_counts(93, 6, 7, 94);
        assert!((r.accuracy - 0.935).abs() < 5e-4);
        assert!((r.precision - 0.939).abs() < 5e-4);
        assert!((r.recall - 0.930).abs() < 5e-4);
        assert!((r.f1 - 0.935).abs() < 5e-4);
        assert!((r.normalized_confusion[0][0] - 0.93).abs() < 1e-12);
        assert!((r.normalized_confusion[1][1] - 0.94).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_give_zero() {
        let r = EvalReport::from_counts(0, 0, 0, 5);
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (0.0, 0.0, 0.0, 1.0));
        assert_eq!(r.normalized_confusion[0], [0.0, 0.0]);
    }

    #[test]
    fn perfect_predictions() {
        let m = model(&[1.0], 0.0);
        let set = vec![(v(&[1.0]), true), (v(&[-1.0]), false), (v(&[2.0]), true)];
        let r = evaluate(&m, &set).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(evaluate(&m, &[]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model(&[0.25, -1.0 / 3.0], 0.1);
        m.save(&path).unwrap();
        assert_eq!(LogisticModel::load(&path).unwrap(), m);
        std::fs::write(&path, r#"{"dim":3,"weights":[1.0],"bias":0,"threshold":0.5,"hyperparams":{"learning_rate":0.1,"l2_lambda":0.0001,"epochs":1},"trained_on":1}"#).unwrap();
        assert!(LogisticModel::load(&path).is_err());
    }
}
