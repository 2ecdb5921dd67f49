//! Open-world text classification.
//!
//! A convolutional text encoder feeds a layer of independent 1-vs-rest
//! sigmoids, one per seen class. At test time a document is rejected as
//! belonging to an unseen class when every sigmoid falls below its class
//! threshold; thresholds are fitted per class from the spread of training
//! probabilities around 1.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense `f64` arrays and a reverse-mode gradient tape
//! - [`encoder`]: embedding + multi-width CNN + two dense layers
//! - [`head`]: 1-vs-rest loss and rejection rule, softmax baseline
//! - [`calibration`]: mirrored-Gaussian threshold fitting
//! - [`data`]: tokenizer, vocabulary, open-world split protocol
//! - [`trainer`]: Adam training with early stopping
//! - [`eval`]: macro-F1 over `m + 1` classes and the experiment sweep
//! - [`model_file`]: versioned binary model container
//! - [`cli`]: the `doc-open` command-line tool
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod calibration;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod model_file;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use calibration::{fit_sigma, fit_thresholds, ThresholdVector};
pub use data::{make_open_split, tokenize, EncodedDocument, Gold, LabeledText, OpenSplit, Vocabulary};
pub use encoder::{EncoderConfig, ModelParams};
pub use error::{DocError, Result};
pub use eval::{evaluate, macro_f1, run_experiment, ConfusionMatrix, Decision, ExperimentSpec};
pub use head::{predict_closed, predict_open, ClassProbabilities, HeadKind, OpenPrediction};
pub use model_file::ModelFile;
pub use tensor::{grad_check, Tape, Tensor};
pub use trainer::{train, TrainConfig, TrainReport};
