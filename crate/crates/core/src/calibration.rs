//! Per-class rejection thresholds from mirrored Gaussian fitting.
//!
//! The training probabilities `p` of each class for its own sigmoid are
//! treated as one half of a Gaussian centred at 1. Mirroring every point to
//! `1 + (1 − p)` completes the distribution, its standard deviation `σ` is
//! estimated, and the threshold is `max(0.5, 1 − α·σ)`.

use serde::{Deserialize, Serialize};

use crate::data::{EncodedDocument, Gold};
use crate::encoder::ModelParams;
use crate::error::{DocError, Result};
use crate::tensor::sigmoid;

pub const DEFAULT_ALPHA: f64 = 3.0;

/// Fitted thresholds, one per seen class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub thresholds: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub alpha: f64,
}

impl ThresholdVector {
    pub fn from_sigmas(sigmas: Vec<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(DocError::input(format!("alpha must be positive, got {alpha}")));
        }
        let thresholds = sigmas.iter().map(|&s| threshold(s, alpha)).collect();
        Ok(ThresholdVector {
            thresholds,
            sigmas,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

pub fn threshold(sigma: f64, alpha: f64) -> f64 {
    f64::max(0.5, 1.0 - alpha * sigma)
}

/// Standard deviation of the probabilities together with their mirror
/// images about 1.
///
/// The mirrored set has mean exactly 1, so the population standard
/// deviation over all `2n` points reduces to `sqrt(Σ(1 − p)² / n)`.
pub fn fit_sigma(class_probs: &[f64]) -> Result<f64> {
    if class_probs.is_empty() {
        return Err(DocError::input("cannot fit sigma to an empty set"));
    }
    if let Some(p) = class_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(DocError::input(format!("probability {p} outside (0, 1]")));
    }
    let sum_sq: f64 = class_probs.iter().map(|&p| (1.0 - p) * (1.0 - p)).sum();
    Ok((sum_sq / class_probs.len() as f64).sqrt())
}

/// For each class `i`, the probabilities `sigmoid(d_i)` of the documents
/// whose gold label is `i`.
pub fn own_class_probabilities(
    params: &ModelParams,
    docs: &[EncodedDocument],
) -> Result<Vec<Vec<f64>>> {
    let m = params.num_classes();
    let mut per_class = vec![Vec::new(); m];
    for doc in docs {
        let Gold::Seen(class) = doc.gold else {
            return Err(DocError::Calibration(format!(
                "document labelled {:?} is not a seen class",
                doc.label
            )));
        };
        if class >= m {
            return Err(DocError::Calibration(format!(
                "class index {class} out of range for {m} classes"
            )));
        }
        let logits = params.forward(&doc.ids)?;
        per_class[class].push(sigmoid(logits[class]));
    }
    Ok(per_class)
}

/// Fits one threshold per seen class from the training documents.
pub fn fit_thresholds(
    params: &ModelParams,
    train: &[EncodedDocument],
    alpha: f64,
    class_names: &[String],
) -> Result<ThresholdVector> {
    if !(alpha > 0.0) {
        return Err(DocError::input(format!("alpha must be positive, got {alpha}")));
    }
    let per_class = own_class_probabilities(params, train)?;
    let sigmas = per_class
        .iter()
        .enumerate()
        .map(|(i, probs)| {
            if probs.is_empty() {
                let name = class_names.get(i).map_or_else(|| i.to_string(), |n| format!("{n:?}"));
                return Err(DocError::Calibration(format!(
                    "class {name} has no training examples"
                )));
            }
            fit_sigma(probs)
        })
        .collect::<Result<Vec<_>>>()?;
    ThresholdVector::from_sigmas(sigmas, alpha)
}
