//! Mini-batch training with Adam and validation-based early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDocument, Gold, TrainingView};
use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{DocError, Result};
use crate::head::{example_loss, HeadKind};
use crate::rng::stream_rng;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub head: HeadKind,
    pub freeze_embeddings: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 20,
            learning_rate: 1e-3,
            patience: 3,
            seed: 0,
            head: HeadKind::OneVsRest,
            freeze_embeddings: false,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.patience < 1 {
            return Err(DocError::input("batch_size and patience must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(DocError::input("learning rate must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-document training loss of each epoch (pre-update batch losses).
    pub train_loss: Vec<f64>,
    /// Mean per-document validation loss after each epoch. Empty when the
    /// split has no validation documents; training loss is monitored instead.
    pub validation_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &[Tensor], config: &TrainConfig) {
        self.step += 1;
        let bias1 = 1.0 - config.beta1.powi(self.step);
        let bias2 = 1.0 - config.beta2.powi(self.step);
        let lr = config.learning_rate;
        for (i, tensor) in params.tensors_mut().into_iter().enumerate() {
            if i == 0 && config.freeze_embeddings {
                continue;
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (p, &g)) in tensor.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
                v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        // The padding row never moves: its gradient is always zero.
    }
}

fn seen_label(doc: &EncodedDocument) -> Result<usize> {
    match doc.gold {
        Gold::Seen(i) => Ok(i),
        Gold::Unseen => Err(DocError::input(format!(
            "unseen-class document ({:?}) cannot be used for training",
            doc.label
        ))),
    }
}

/// Loss of one document and its gradient w.r.t. every parameter tensor.
pub fn example_gradients(
    params: &ModelParams,
    doc: &[usize],
    label: usize,
    head: HeadKind,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let (vars, logits) = params.record(&mut tape, doc)?;
    let (value, grad) = example_loss(head, tape.value(logits).data(), label)?;
    let loss = tape.scalar_fn(logits, value, Tensor::from_vec(grad))?;
    let mut grads = tape.backward(loss)?;
    Ok((value, vars.into_iter().map(|v| grads.take(v)).collect()))
}

/// Summed loss and summed gradients over `batch`, accumulated in order.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[&EncodedDocument],
    head: HeadKind,
) -> Result<(f64, Vec<Tensor>)> {
    let mut total = 0.0;
    let mut acc: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    for doc in batch {
        let (loss, grads) = example_gradients(params, &doc.ids, seen_label(doc)?, head)?;
        total += loss;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    Ok((total, acc))
}

/// One forward/backward/update cycle on the batch-averaged loss. Returns the
/// pre-update loss divided by the batch size.
pub fn training_step(
    params: &mut ModelParams,
    batch: &[&EncodedDocument],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(DocError::input("empty batch"));
    }
    let (total, mut grads) = batch_gradients(params, batch, config.head)?;
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    let loss = total * scale;
    if loss.is_finite() {
        state.apply(params, &grads, config);
    }
    Ok(loss)
}

/// Mean per-document loss of `docs` under `head`.
pub fn dataset_loss(params: &ModelParams, docs: &[EncodedDocument], head: HeadKind) -> Result<f64> {
    if docs.is_empty() {
        return Err(DocError::input("cannot compute the loss of an empty set"));
    }
    let mut total = 0.0;
    for doc in docs {
        let logits = params.forward(&doc.ids)?;
        total += example_loss(head, &logits, seen_label(doc)?)?.0;
    }
    Ok(total / docs.len() as f64)
}

/// Initializes parameters from `train_config.seed` and trains them.
pub fn train(
    view: TrainingView<'_>,
    enc_config: &EncoderConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    let params = ModelParams::init(enc_config, train_config.seed)?;
    train_from(view, params, train_config)
}

/// Trains starting from `params` and returns the parameters of the epoch
/// with the lowest validation loss.
pub fn train_from(
    view: TrainingView<'_>,
    mut params: ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if view.train.is_empty() {
        return Err(DocError::input("training split is empty"));
    }
    if params.num_classes() != view.num_classes {
        return Err(DocError::input(format!(
            "model has {} classes, split has {}",
            params.num_classes(),
            view.num_classes
        )));
    }
    let mut present = vec![false; view.num_classes];
    for (i, doc) in view.train.iter().chain(view.validation).enumerate() {
        let label = seen_label(doc)?;
        if label >= view.num_classes {
            return Err(DocError::input(format!("label {label} out of range")));
        }
        if i < view.train.len() {
            present[label] = true;
        }
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(DocError::input(format!("seen class {missing} has no training documents")));
    }

    let mut state = AdamState::new(&params);
    let mut report = TrainReport {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..view.train.len()).collect();

    for epoch in 0..config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, 1 + epoch as u64));
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EncodedDocument> = chunk.iter().map(|&i| &view.train[i]).collect();
            let loss = training_step(&mut params, &batch, &mut state, config)?;
            if !loss.is_finite() {
                return Err(DocError::Diverged {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            epoch_total += loss * batch.len() as f64;
        }
        let train_loss = epoch_total / view.train.len() as f64;
        report.train_loss.push(train_loss);

        let monitored = if view.validation.is_empty() {
            train_loss
        } else {
            let v = dataset_loss(&params, view.validation, config.head)?;
            report.validation_loss.push(v);
            v
        };
        if !monitored.is_finite() {
            return Err(DocError::Diverged {
                epoch: epoch + 1,
                batch: 0,
            });
        }
        if best.as_ref().map_or(true, |(b, _)| monitored < *b) {
            best = Some((monitored, params.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = epoch + 1 < config.max_epochs;
                break;
            }
        }
    }
    let params = best.map_or(params, |(_, p)| p);
    Ok((params, report))
}
