//! Open-world evaluation: confusion matrices over `m + 1` classes (the last
//! one is rejection), macro-F1, and the seen-fraction sweep.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calibration::{fit_thresholds, DEFAULT_ALPHA};
use crate::data::{make_open_split, EncodedDocument, Gold, LabeledText};
use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{DocError, Result};
use crate::head::{predict_closed, predict_open_with, ArgmaxRule, ClassProbabilities, HeadKind};
use crate::rng::derive_seed;
use crate::trainer::{train, TrainConfig};

/// Counts of (gold, predicted) pairs. Index `m` on either axis stands for
/// "unseen" (gold) or "rejected" (prediction).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    seen: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(seen_classes: usize) -> Self {
        let n = seen_classes + 1;
        ConfusionMatrix {
            seen: seen_classes,
            counts: vec![0; n * n],
        }
    }

    /// Builds a matrix from `(m + 1)` rows of `(m + 1)` counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 || rows.iter().any(|r| r.len() != n) {
            return Err(DocError::input("confusion matrix must be square with at least 2 rows"));
        }
        Ok(ConfusionMatrix {
            seen: n - 1,
            counts: rows.concat(),
        })
    }

    pub fn seen_classes(&self) -> usize {
        self.seen
    }

    /// Side length, `m + 1`.
    pub fn size(&self) -> usize {
        self.seen + 1
    }

    pub fn get(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold * self.size() + predicted]
    }

    pub fn add(&mut self, gold: Gold, predicted: Option<usize>) {
        let g = gold.seen().unwrap_or(self.seen);
        let p = predicted.unwrap_or(self.seen);
        let n = self.size();
        self.counts[g * n + p] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.size()).map(<[u64]>::to_vec).collect()
    }

    /// F1 of class `c`; any 0/0 ratio counts as 0.
    pub fn f1(&self, c: usize) -> f64 {
        let n = self.size();
        let tp = self.get(c, c) as f64;
        let predicted: u64 = (0..n).map(|g| self.get(g, c)).sum();
        let actual: u64 = (0..n).map(|p| self.get(c, p)).sum();
        let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    /// Whether the rejection class takes part in macro averaging. It does
    /// not when no gold document is unseen (the closed-world setting).
    pub fn scores_rejection(&self) -> bool {
        (0..self.size()).any(|p| self.get(self.seen, p) > 0)
    }
}

/// Unweighted mean of per-class F1 over the seen classes and, unless the
/// test set has no unseen documents, the rejection class.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let classes = if cm.scores_rejection() {
        cm.size()
    } else {
        cm.seen_classes()
    };
    (0..classes).map(|c| cm.f1(c)).sum::<f64>() / classes as f64
}

/// How logits become a decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision<'a> {
    /// Sigmoid probabilities checked against per-class thresholds.
    Open { thresholds: &'a [f64], rule: ArgmaxRule },
    /// Plain argmax; never rejects.
    Closed,
}

impl Decision<'_> {
    pub fn open(thresholds: &[f64]) -> Decision<'_> {
        Decision::Open {
            thresholds,
            rule: ArgmaxRule::AllClasses,
        }
    }

    pub fn decide(&self, logits: &[f64]) -> Result<Option<usize>> {
        match self {
            Decision::Open { thresholds, rule } => {
                let probs = ClassProbabilities::from_logits(logits);
                Ok(predict_open_with(&probs, thresholds, *rule)?.class_index())
            }
            Decision::Closed => predict_closed(logits).map(Some),
        }
    }
}

pub fn predict_logits(params: &ModelParams, docs: &[EncodedDocument]) -> Result<Vec<Vec<f64>>> {
    docs.iter().map(|d| params.forward(&d.ids)).collect()
}

pub fn confusion_from_logits(
    logits: &[Vec<f64>],
    docs: &[EncodedDocument],
    seen_classes: usize,
    decision: Decision<'_>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(seen_classes);
    for (row, doc) in logits.iter().zip(docs) {
        cm.add(doc.gold, decision.decide(row)?);
    }
    Ok(cm)
}

/// Classifies every test document and tallies the confusion matrix.
pub fn evaluate(
    params: &ModelParams,
    decision: Decision<'_>,
    test: &[EncodedDocument],
) -> Result<ConfusionMatrix> {
    let logits = predict_logits(params, test)?;
    confusion_from_logits(&logits, test, params.num_classes(), decision)
}

pub const METHOD_DOC: &str = "DOC";
pub const METHOD_DOC_HALF: &str = "DOC(t=0.5)";
pub const METHOD_SOFTMAX: &str = "Softmax";

/// Parameters of a seen-fraction sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub seen_fractions: Vec<f64>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// `vocab_size` and `num_classes` are overwritten per split.
    pub encoder: EncoderConfig,
    pub vocab_max_size: usize,
    pub train: TrainConfig,
    pub alpha: f64,
    /// Also train the softmax head and score it without rejection.
    pub softmax_baseline: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seen_fractions: vec![0.25, 0.5, 0.75, 1.0],
            repetitions: 10,
            base_seed: 0,
            encoder: EncoderConfig::default(),
            vocab_max_size: 5000,
            train: TrainConfig::default(),
            alpha: DEFAULT_ALPHA,
            softmax_baseline: true,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(DocError::input("repetitions must be at least 1"));
        }
        if self.seen_fractions.is_empty()
            || self.seen_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(DocError::input("seen fractions must be non-empty and lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<&'static str> {
        let mut m = vec![METHOD_DOC, METHOD_DOC_HALF];
        if self.softmax_baseline {
            m.push(METHOD_SOFTMAX);
        }
        m
    }

    /// Seed shared by every method of one (fraction, repetition) cell.
    pub fn repetition_seed(&self, fraction_index: usize, repetition: usize) -> u64 {
        derive_seed(self.base_seed, ((fraction_index as u64) << 32) | repetition as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// One (fraction, repetition) trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fraction: f64,
    pub repetition: usize,
    pub seed: u64,
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub thresholds: Vec<f64>,
    pub scores: Vec<MethodScore>,
}

impl RunResult {
    pub fn score(&self, method: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.method == method).map(|s| s.macro_f1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub fraction: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub cells: Vec<Cell>,
}

/// Results of a sweep: aggregated table plus every individual run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub fractions: Vec<f64>,
    pub table: Vec<MethodRow>,
    pub runs: Vec<RunResult>,
}

impl ExperimentReport {
    pub fn cell(&self, method: &str, fraction: f64) -> Option<&Cell> {
        self.table
            .iter()
            .find(|r| r.method == method)?
            .cells
            .iter()
            .find(|c| c.fraction == fraction)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table with methods as rows and seen fractions as columns,
    /// each cell `mean ± std` of macro-F1.
    pub fn to_text(&self) -> String {
        let header: Vec<String> =
            self.fractions.iter().map(|f| format!("{}%", f * 100.0)).collect();
        let rows: Vec<(String, Vec<String>)> = self
            .table
            .iter()
            .map(|r| {
                let cells = r.cells.iter().map(|c| format!("{:.4} ± {:.4}", c.mean, c.std)).collect();
                (r.method.clone(), cells)
            })
            .collect();
        let first = "% of seen classes";
        let name_w = rows.iter().map(|r| r.0.len()).chain([first.len()]).max().unwrap_or(0);
        let cell_w = rows
            .iter()
            .flat_map(|r| r.1.iter().map(|c| c.chars().count()))
            .chain(header.iter().map(String::len))
            .max()
            .unwrap_or(0);

        let mut out = String::new();
        let _ = write!(out, "{first:<name_w$}");
        for h in &header {
            let _ = write!(out, " | {h:>cell_w$}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(name_w + header.len() * (cell_w + 3)));
        out.push('\n');
        for (name, cells) in &rows {
            let _ = write!(out, "{name:<name_w$}");
            for c in cells {
                let pad = cell_w - c.chars().count();
                let _ = write!(out, " | {}{c}", " ".repeat(pad));
            }
            out.push('\n');
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one trial: split, train the 1-vs-rest model, fit thresholds on the
/// training split, evaluate DOC and DOC(t=0.5), and optionally the softmax
/// baseline.
pub fn run_single(
    spec: &ExperimentSpec,
    dataset: &[LabeledText],
    fraction: f64,
    repetition: usize,
    seed: u64,
) -> Result<RunResult> {
    let split = make_open_split(dataset, fraction, seed)?;
    let vocab = split.build_vocab(dataset, spec.vocab_max_size)?;
    let encoded = split.encode(dataset, &vocab, spec.encoder.doc_len);
    let m = encoded.num_classes();
    let enc_config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: m,
        ..spec.encoder.clone()
    };
    let train_config = TrainConfig {
        seed: derive_seed(seed, 0x7124),
        head: HeadKind::OneVsRest,
        ..spec.train.clone()
    };

    let (params, _) = train(encoded.training_view(), &enc_config, &train_config)?;
    let thresholds = fit_thresholds(&params, &encoded.train, spec.alpha, &encoded.seen_classes)?;
    let logits = predict_logits(&params, &encoded.test)?;
    let half = vec![0.5; m];

    let mut scores = Vec::new();
    let mut push = |method: &str, cm: ConfusionMatrix| {
        scores.push(MethodScore {
            method: method.to_owned(),
            macro_f1: macro_f1(&cm),
            confusion: cm.rows(),
        })
    };
    push(
        METHOD_DOC,
        confusion_from_logits(&logits, &encoded.test, m, Decision::open(&thresholds.thresholds))?,
    );
    push(
        METHOD_DOC_HALF,
        confusion_from_logits(&logits, &encoded.test, m, Decision::open(&half))?,
    );
    if spec.softmax_baseline {
        let softmax_config = TrainConfig {
            head: HeadKind::Softmax,
            ..train_config
        };
        let (sm, _) = train(encoded.training_view(), &enc_config, &softmax_config)?;
        push(METHOD_SOFTMAX, evaluate(&sm, Decision::Closed, &encoded.test)?);
    }

    Ok(RunResult {
        fraction,
        repetition,
        seed,
        seen_classes: encoded.seen_classes,
        unseen_classes: encoded.unseen_classes,
        thresholds: thresholds.thresholds,
        scores,
    })
}

/// Sweeps every seen fraction with `repetitions` independent class draws
/// and reports mean and sample standard deviation of macro-F1 per method.
pub fn run_experiment(spec: &ExperimentSpec, dataset: &[LabeledText]) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut runs = Vec::new();
    for (fi, &fraction) in spec.seen_fractions.iter().enumerate() {
        for repetition in 0..spec.repetitions {
            let seed = spec.repetition_seed(fi, repetition);
            let run = run_single(spec, dataset, fraction, repetition, seed).map_err(|e| {
                DocError::Experiment {
                    fraction,
                    repetition,
                    source: Box::new(e),
                }
            })?;
            runs.push(run);
        }
    }
    let table = spec
        .methods()
        .into_iter()
        .map(|method| MethodRow {
            method: method.to_owned(),
            cells: spec
                .seen_fractions
                .iter()
                .map(|&fraction| {
                    let values: Vec<f64> = runs
                        .iter()
                        .filter(|r| r.fraction == fraction)
                        .filter_map(|r| r.score(method))
                        .collect();
                    let (mean, std) = mean_std(&values);
                    Cell {
                        fraction,
                        mean,
                        std,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(ExperimentReport {
        fractions: spec.seen_fractions.clone(),
        table,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: recount TP/FP/FN from an explicit list of pairs.
    fn pairwise_macro_f1(pairs: &[(usize, usize)], n: usize) -> f64 {
        let has_unseen = pairs.iter().any(|&(g, _)| g == n - 1);
        let classes = if has_unseen { n } else { n - 1 };
        let mut sum = 0.0;
        for c in 0..classes {
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for &(g, p) in pairs {
                match (g == c, p == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    _ => {}
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        sum / classes as f64
    }

    #[test]
    fn perfect_matrix_scores_one() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 7]]).unwrap();
        assert_eq!(macro_f1(&cm), 1.0);
    }

    #[test]
    fn hand_worked_example() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 1, 1], vec![0, 9, 1], vec![2, 0, 8]]).unwrap();
        assert!((cm.f1(0) - 0.8).abs() < 1e-12);
        assert!((cm.f1(1) - 0.9).abs() < 1e-12);
        assert!((cm.f1(2) - 0.8).abs() < 1e-12);
        assert!((macro_f1(&cm) - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_seen_class_counts_as_zero() {
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0, 0], vec![0, 0, 0], vec![0, 0, 2]]).unwrap();
        assert!((macro_f1(&cm) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_world_ignores_rejection_class() {
        let cm = ConfusionMatrix::from_rows(&[vec![4, 1, 0], vec![0, 5, 0], vec![0, 0, 0]]).unwrap();
        assert!(!cm.scores_rejection());
        assert!((macro_f1(&cm) - (cm.f1(0) + cm.f1(1)) / 2.0).abs() < 1e-15);
        // A rejected seen document still costs recall.
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0, 1], vec![0, 5, 0], vec![0, 0, 0]]).unwrap();
        assert!(macro_f1(&cm) < 1.0);
    }

    #[test]
    fn add_maps_unseen_and_reject_to_last_index() {
        let mut cm = ConfusionMatrix::new(2);
        cm.add(Gold::Unseen, None);
        cm.add(Gold::Seen(1), None);
        cm.add(Gold::Unseen, Some(0));
        assert_eq!(cm.get(2, 2), 1);
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!(cm.get(2, 0), 1);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn decisions() {
        let t = [1.0, 1.0];
        assert_eq!(Decision::open(&t).decide(&[3.0, 5.0]).unwrap(), None);
        assert_eq!(Decision::open(&[0.5, 0.5]).decide(&[3.0, 5.0]).unwrap(), Some(1));
        assert_eq!(Decision::Closed.decide(&[-3.0, -5.0]).unwrap(), Some(0));
    }

    #[test]
    fn text_table_layout() {
        let report = ExperimentReport {
            fractions: vec![0.25, 1.0],
            table: vec![MethodRow {
                method: "DOC".into(),
                cells: vec![
                    Cell { fraction: 0.25, mean: 0.8231, std: 0.01 },
                    Cell { fraction: 1.0, mean: 0.926, std: 0.0 },
                ],
            }],
            runs: vec![],
        };
        let text = report.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("% of seen classes"));
        assert!(lines[0].contains("25%") && lines[0].contains("100%"));
        assert!(lines[2].contains("0.8231 ± 0.0100"));
        assert!(lines[2].contains("0.9260 ± 0.0000"));
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0u64..6, n), n))
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(rows in matrix_strategy()) {
            let n = rows.len();
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            let mut pairs = Vec::new();
            for (g, row) in rows.iter().enumerate() {
                for (p, &c) in row.iter().enumerate() {
                    pairs.extend(std::iter::repeat((g, p)).take(c as usize));
                }
            }
            let f = macro_f1(&cm);
            prop_assert!((f - pairwise_macro_f1(&pairs, n)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn invariant_under_seen_relabeling(rows in matrix_strategy(), rot in 0usize..5) {
            let n = rows.len();
            let m = n - 1;
            let perm = |i: usize| if i == m { m } else { (i + rot) % m };
            let mut permuted = vec![vec![0; n]; n];
            for g in 0..n {
                for p in 0..n {
                    permuted[perm(g)][perm(p)] = rows[g][p];
                }
            }
            let a = macro_f1(&ConfusionMatrix::from_rows(&rows).unwrap());
            let b = macro_f1(&ConfusionMatrix::from_rows(&permuted).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn one_iff_diagonal(rows in matrix_strategy()) {
            let n = rows.len();
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            let scored = if cm.scores_rejection() { n } else { n - 1 };
            let diagonal = (0..n).all(|g| (0..n).all(|p| g == p || rows[g][p] == 0))
                && (0..scored).all(|c| rows[c][c] > 0);
            prop_assert_eq!(macro_f1(&cm) == 1.0, diagonal);
        }
    }
}
