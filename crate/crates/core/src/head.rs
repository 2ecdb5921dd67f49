//! Output heads: the 1-vs-rest sigmoid layer with its rejection rule, and
//! the closed-world softmax baseline.

use serde::{Deserialize, Serialize};

use crate::error::{DocError, Result};
use crate::tensor::{sigmoid, softplus};

/// Which output layer a model was trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    OneVsRest,
    Softmax,
}

/// Independent per-class sigmoid probabilities. These are not normalized
/// across classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbabilities(pub Vec<f64>);

impl ClassProbabilities {
    pub fn from_logits(logits: &[f64]) -> Self {
        ClassProbabilities(logits.iter().map(|&d| sigmoid(d)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Outcome of open-world prediction for one document.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpenPrediction {
    Reject,
    Class { index: usize, probability: f64 },
}

impl OpenPrediction {
    pub fn class_index(&self) -> Option<usize> {
        match self {
            OpenPrediction::Reject => None,
            OpenPrediction::Class { index, .. } => Some(*index),
        }
    }
}

/// How the winning class is picked once a document is not rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ArgmaxRule {
    /// Argmax over every seen class, even ones below their own threshold.
    #[default]
    AllClasses,
    /// Argmax restricted to classes that cleared their threshold.
    AboveThreshold,
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(DocError::input(format!(
            "label {l} out of range for {classes} classes"
        ))),
        None => Ok(()),
    }
}

fn check_batch(logits: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if logits.len() != labels.len() {
        return Err(DocError::input(format!(
            "{} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let classes = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|row| row.len() != classes) {
        return Err(DocError::input("ragged logit batch"));
    }
    check_labels(labels, classes)?;
    Ok(classes)
}

/// Summed 1-vs-rest log loss of one example and its gradient w.r.t. the
/// logits. Each term is `softplus(d) − y·d`, the stable form of
/// `−y·log σ(d) − (1−y)·log(1−σ(d))`.
pub fn one_vs_rest_example(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &d) in logits.iter().enumerate() {
        if i == label {
            total += softplus(-d);
            grad.push(sigmoid_unclamped(d) - 1.0);
        } else {
            total += softplus(d);
            grad.push(sigmoid_unclamped(d));
        }
    }
    (total, grad)
}

fn sigmoid_unclamped(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Total (unaveraged) 1-vs-rest log loss over a batch of logit rows.
pub fn loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_batch(logits, labels)?;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| one_vs_rest_example(row, y).0)
        .sum())
}

/// Negative log-likelihood of one example under softmax, and its gradient.
pub fn softmax_example(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&d| (d - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let lse = max + z.ln();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / z - if i == label { 1.0 } else { 0.0 })
        .collect();
    (lse - logits[label], grad)
}

/// Total softmax cross-entropy over a batch.
pub fn softmax_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_batch(logits, labels)?;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| softmax_example(row, y).0)
        .sum())
}

/// Per-example loss and logit gradient for the given head.
pub fn example_loss(head: HeadKind, logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_labels(&[label], logits.len())?;
    Ok(match head {
        HeadKind::OneVsRest => one_vs_rest_example(logits, label),
        HeadKind::Softmax => softmax_example(logits, label),
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&d| (d - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn argmax_where(values: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if keep(i) && best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Rejects when every probability is below its class threshold; otherwise
/// returns the highest-probability class.
pub fn predict_open(probs: &ClassProbabilities, thresholds: &[f64]) -> Result<OpenPrediction> {
    predict_open_with(probs, thresholds, ArgmaxRule::AllClasses)
}

pub fn predict_open_with(
    probs: &ClassProbabilities,
    thresholds: &[f64],
    rule: ArgmaxRule,
) -> Result<OpenPrediction> {
    let p = probs.as_slice();
    if p.len() != thresholds.len() || p.is_empty() {
        return Err(DocError::input(format!(
            "{} probabilities but {} thresholds",
            p.len(),
            thresholds.len()
        )));
    }
    let clears = |i: usize| p[i] >= thresholds[i];
    if !(0..p.len()).any(clears) {
        return Ok(OpenPrediction::Reject);
    }
    let index = match rule {
        ArgmaxRule::AllClasses => argmax_where(p, |_| true),
        ArgmaxRule::AboveThreshold => argmax_where(p, clears),
    }
    .expect("at least one class is eligible");
    Ok(OpenPrediction::Class {
        index,
        probability: p[index],
    })
}

/// Closed-world decision: argmax, ties to the lowest index.
pub fn predict_closed(scores: &[f64]) -> Result<usize> {
    argmax_where(scores, |_| true).ok_or_else(|| DocError::input("empty score vector"))
}
