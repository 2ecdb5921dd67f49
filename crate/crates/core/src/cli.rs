//! Command-line front end: `train`, `calibrate`, `predict`, `experiment`
//! and `inspect`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numerical failure.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibration::{fit_thresholds, DEFAULT_ALPHA};
use crate::data::{make_open_split, read_dataset, EncodedDocument, LabeledText};
use crate::encoder::{load_pretrained_embeddings, EncoderConfig, ModelParams};
use crate::error::{DocError, Result};
use crate::eval::{run_experiment, ExperimentSpec};
use crate::head::{predict_closed, predict_open, softmax, ClassProbabilities, HeadKind, OpenPrediction};
use crate::model_file::ModelFile;
use crate::trainer::{train_from, TrainConfig};

pub const REJECT_LABEL: &str = "REJECT";

#[derive(Debug, Parser)]
#[command(name = "doc-open", version, about = "Open-world text classification with rejection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary, train a model and save it.
    Train(TrainArgs),
    /// Fit per-class rejection thresholds and store them in the model.
    Calibrate(CalibrateArgs),
    /// Classify one document per input line.
    Predict(PredictArgs),
    /// Run the seen-fraction sweep and report macro-F1.
    Experiment(ExperimentArgs),
    /// Print a model's configuration, vocabulary size and thresholds.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    OneVsRest,
    Softmax,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::OneVsRest => HeadKind::OneVsRest,
            HeadArg::Softmax => HeadKind::Softmax,
        }
    }
}

/// Architecture and optimizer flags shared by `train` and `experiment`.
#[derive(Debug, Clone, Args)]
pub struct ModelOptions {
    #[arg(long, default_value_t = 50)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 200)]
    pub doc_len: usize,
    /// Maximum vocabulary size, including the padding and unknown tokens.
    #[arg(long, default_value_t = 5000)]
    pub vocab_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub filter_widths: Vec<usize>,
    #[arg(long, default_value_t = 150)]
    pub filters: usize,
    #[arg(long, default_value_t = 250)]
    pub hidden: usize,
    /// Pool raw convolution outputs instead of ReLU-activated ones.
    #[arg(long)]
    pub no_conv_relu: bool,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long)]
    pub freeze_embeddings: bool,
}

impl ModelOptions {
    fn encoder(&self) -> EncoderConfig {
        let mut filter_widths = self.filter_widths.clone();
        filter_widths.sort_unstable();
        filter_widths.dedup();
        EncoderConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            filter_widths,
            filters_per_width: self.filters,
            hidden_dim: self.hidden,
            num_classes: 2,
            doc_len: self.doc_len,
            conv_relu: !self.no_conv_relu,
        }
    }

    fn train_config(&self, seed: u64, head: HeadKind) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            learning_rate: self.lr,
            patience: self.patience,
            seed,
            head,
            freeze_embeddings: self.freeze_embeddings,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON-lines dataset with `label` and `text` keys.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of classes treated as seen; the rest are held out.
    #[arg(long, default_value_t = 1.0)]
    pub seen_fraction: f64,
    #[arg(long, value_enum, default_value_t = HeadArg::OneVsRest)]
    pub head: HeadArg,
    /// Fit rejection thresholds on the training split after training.
    #[arg(long)]
    pub calibrate: bool,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Word vectors (`token v1 ... ve` per line) to initialize embeddings.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Where to write the training report (default: `<out>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Optional JSON manifest of the split.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOptions,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training documents of the model's seen classes.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Output path (default: overwrite `--model`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Tsv,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input file, one document per line (raw text or a JSON object with a
    /// `text` key). `-` reads standard input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Use this threshold for every class instead of the fitted ones.
    #[arg(long = "t")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1.0")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Plain-text table path (the table is always printed to stdout).
    #[arg(long)]
    pub text_report: Option<PathBuf>,
    /// Skip the softmax no-rejection baseline.
    #[arg(long)]
    pub no_softmax: bool,
    #[command(flatten)]
    pub model: ModelOptions,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a, out).map(|_| ()),
        Command::Calibrate(a) => cmd_calibrate(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Experiment(a) => cmd_experiment(&a, out).map(|_| ()),
        Command::Inspect(a) => cmd_inspect(&a, out),
    }
}

fn load_dataset(path: &Path) -> Result<Vec<LabeledText>> {
    read_dataset(BufReader::new(File::open(path)?))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Trains and saves a model. Returns the saved model.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<ModelFile> {
    let head = HeadKind::from(args.head);
    let dataset = load_dataset(&args.data)?;
    let split = make_open_split(&dataset, args.seen_fraction, args.seed)?;
    let vocab = split.build_vocab(&dataset, args.model.vocab_size)?;
    let encoded = split.encode(&dataset, &vocab, args.model.doc_len);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: encoded.num_classes(),
        ..args.model.encoder()
    };
    let train_config = args.model.train_config(args.seed, head);

    let mut params = ModelParams::init(&config, args.seed)?;
    if let Some(path) = &args.pretrained {
        let n = load_pretrained_embeddings(&mut params, BufReader::new(File::open(path)?), &vocab)?;
        writeln!(out, "loaded {n} pretrained embedding rows")?;
    }
    let (params, report) = train_from(encoded.training_view(), params, &train_config)?;

    let thresholds = if args.calibrate {
        if head != HeadKind::OneVsRest {
            return Err(DocError::Config("only the one-vs-rest head can be calibrated".into()));
        }
        Some(fit_thresholds(&params, &encoded.train, args.alpha, &encoded.seen_classes)?)
    } else {
        None
    };
    let model = ModelFile {
        head,
        vocab,
        classes: encoded.seen_classes.clone(),
        params,
        thresholds,
    };
    model.save(&args.out)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".report.json"));
    std::fs::write(&report_path, report.to_json()?)?;
    if let Some(path) = &args.manifest {
        std::fs::write(path, split.to_manifest_json()?)?;
    }
    writeln!(
        out,
        "trained {} epochs (best {}), {} seen classes, saved {}",
        report.epochs_run(),
        report.best_epoch + 1,
        model.classes.len(),
        args.out.display()
    )?;
    if let Some(tv) = &model.thresholds {
        write_threshold_table(out, &model.classes, tv)?;
    }
    Ok(model)
}

fn write_threshold_table(
    out: &mut dyn Write,
    classes: &[String],
    tv: &crate::calibration::ThresholdVector,
) -> Result<()> {
    let w = classes.iter().map(String::len).max().unwrap_or(5).max(5);
    writeln!(out, "{:<w$}  {:>10}  {:>10}", "class", "sigma", "threshold")?;
    for ((c, s), t) in classes.iter().zip(&tv.sigmas).zip(&tv.thresholds) {
        writeln!(out, "{c:<w$}  {s:>10.6}  {t:>10.6}")?;
    }
    Ok(())
}

/// Fits thresholds on `--data` and writes the updated model.
pub fn cmd_calibrate(args: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = ModelFile::load(&args.model)?;
    if model.head != HeadKind::OneVsRest {
        return Err(DocError::Config("only the one-vs-rest head can be calibrated".into()));
    }
    let dataset = load_dataset(&args.data)?;
    let doc_len = model.config().doc_len;
    let docs = dataset
        .iter()
        .map(|d| {
            let index = model.classes.iter().position(|c| c == &d.label).ok_or_else(|| {
                DocError::Calibration(format!("class {:?} is not one of the model's classes", d.label))
            })?;
            Ok(EncodedDocument {
                ids: model.vocab.encode_text(&d.text, doc_len),
                label: d.label.clone(),
                gold: crate::data::Gold::Seen(index),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tv = fit_thresholds(&model.params, &docs, args.alpha, &model.classes)?;
    write_threshold_table(out, &model.classes, &tv)?;
    model.thresholds = Some(tv);
    model.save(args.out.as_ref().unwrap_or(&args.model))?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    prediction: &'a str,
    probability: f64,
    probabilities: &'a [f64],
}

fn document_text(line: &str) -> String {
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(line) {
        if let Some(serde_json::Value::String(text)) = map.get("text") {
            return text.clone();
        }
    }
    line.to_owned()
}

/// Classifies every line of `--input`. Softmax-head models never reject.
pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let m = model.classes.len();
    let thresholds: Option<Vec<f64>> = match (args.threshold, &model.thresholds, model.head) {
        (_, _, HeadKind::Softmax) => None,
        (Some(t), _, _) => Some(vec![t; m]),
        (None, Some(tv), _) => Some(tv.thresholds.clone()),
        (None, None, _) => {
            return Err(DocError::Config(
                "model has no thresholds; run `calibrate` or pass --t".into(),
            ))
        }
    };
    let reader: Box<dyn BufRead> = if args.input.as_os_str() == "-" {
        Box::new(BufReader::new(std::io::stdin()))
    } else {
        Box::new(BufReader::new(File::open(&args.input)?))
    };
    for line in reader.lines() {
        let text = document_text(&line?);
        let ids = model.vocab.encode_text(&text, model.config().doc_len);
        let logits = model.params.forward(&ids)?;
        let (probs, prediction) = match &thresholds {
            Some(t) => {
                let probs = ClassProbabilities::from_logits(&logits);
                let pred = predict_open(&probs, t)?;
                (probs.0, pred)
            }
            None => {
                let probs = softmax(&logits);
                let index = predict_closed(&probs)?;
                let pred = OpenPrediction::Class {
                    index,
                    probability: probs[index],
                };
                (probs, pred)
            }
        };
        let (label, probability) = match prediction {
            OpenPrediction::Reject => (
                REJECT_LABEL,
                probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
            OpenPrediction::Class { index, probability } => (model.classes[index].as_str(), probability),
        };
        match args.format {
            OutputFormat::Json => {
                let record = PredictionRecord {
                    prediction: label,
                    probability,
                    probabilities: &probs,
                };
                serde_json::to_writer(&mut *out, &record)?;
                writeln!(out)?;
            }
            OutputFormat::Tsv => {
                write!(out, "{label}\t{probability}")?;
                for p in &probs {
                    write!(out, "\t{p}")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

pub fn experiment_spec(args: &ExperimentArgs) -> ExperimentSpec {
    ExperimentSpec {
        seen_fractions: args.fractions.clone(),
        repetitions: args.reps,
        base_seed: args.seed,
        encoder: args.model.encoder(),
        vocab_max_size: args.model.vocab_size,
        train: args.model.train_config(args.seed, HeadKind::OneVsRest),
        alpha: args.alpha,
        softmax_baseline: !args.no_softmax,
    }
}

/// Runs the sweep, prints the text table and writes the requested reports.
pub fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write) -> Result<crate::eval::ExperimentReport> {
    let dataset = load_dataset(&args.data)?;
    let report = run_experiment(&experiment_spec(args), &dataset)?;
    let text = report.to_text();
    out.write_all(text.as_bytes())?;
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json()?)?;
    }
    if let Some(path) = &args.text_report {
        std::fs::write(path, &text)?;
    }
    Ok(report)
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let c = model.config();
    writeln!(out, "head:              {:?}", model.head)?;
    writeln!(out, "vocabulary:        {} tokens", model.vocab.len())?;
    writeln!(out, "embedding dim:     {}", c.embed_dim)?;
    writeln!(out, "document length:   {}", c.doc_len)?;
    writeln!(out, "filter widths:     {:?} x {}", c.filter_widths, c.filters_per_width)?;
    writeln!(out, "conv relu:         {}", c.conv_relu)?;
    writeln!(out, "hidden dim:        {}", c.hidden_dim)?;
    writeln!(out, "classes:           {}", model.classes.join(", "))?;
    match &model.thresholds {
        Some(tv) => {
            writeln!(out, "alpha:             {}", tv.alpha)?;
            write_threshold_table(out, &model.classes, tv)?;
        }
        None => writeln!(out, "thresholds:        none")?,
    }
    Ok(())
}
