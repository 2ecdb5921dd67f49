//! Text preprocessing and the open-world split protocol.
//!
//! Documents arrive as JSON lines `{"label": ..., "text": ...}`. They are
//! tokenized, split per class into train/validation/test (60/10/30), and a
//! random subset of classes is held out as unseen: unseen documents are
//! dropped from train and validation and only appear in test.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DocError, Result};
use crate::rng::stream_rng;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// One labeled document as stored in a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledText {
    pub label: String,
    pub text: String,
}

/// Reads a JSON-lines dataset. Blank lines are skipped.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabeledText = serde_json::from_str(&line)
            .map_err(|e| DocError::format(Some(i + 1), e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_dataset<W: std::io::Write>(mut writer: W, docs: &[LabeledText]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut writer, doc)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token → id map. Id 0 is padding, id 1 is the unknown token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `max_size − 2` most frequent tokens; equal counts are broken
    /// by ascending lexicographic order.
    pub fn build<'a, I, D>(docs: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        if max_size < 3 {
            return Err(DocError::input("vocabulary max_size must be at least 3"));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for token in doc {
                *counts.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - 2);
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(str::to_owned)
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from tokens listed in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(DocError::format(None, "vocabulary must start with <pad>, <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id).is_some() {
                return Err(DocError::format(None, format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to ids, truncating to the first `doc_len` tokens or
    /// padding at the end.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], doc_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = tokens
            .iter()
            .take(doc_len)
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK_ID))
            .collect();
        ids.resize(doc_len, PAD_ID);
        ids
    }

    pub fn encode_text(&self, text: &str, doc_len: usize) -> Vec<usize> {
        self.encode(&tokenize(text), doc_len)
    }
}

/// Gold label relative to the seen classes of a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gold {
    Seen(usize),
    Unseen,
}

impl Gold {
    pub fn seen(self) -> Option<usize> {
        match self {
            Gold::Seen(i) => Some(i),
            Gold::Unseen => None,
        }
    }
}

/// A document reduced to a fixed-length id sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDocument {
    pub ids: Vec<usize>,
    pub label: String,
    pub gold: Gold,
}

/// Dataset indices assigned to each part of one open-world split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenSplit {
    /// Seen class names; position is the class index.
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `dataset` for one open-world trial.
///
/// `round(seen_fraction × classes)` classes are drawn as seen (at least two
/// are required). Each class is split 60/10/30 with validation and test
/// sizes rounded down; train, validation, and test of seen classes are
/// kept, while unseen classes contribute only their test portion.
pub fn make_open_split(dataset: &[LabeledText], seen_fraction: f64, rep_seed: u64) -> Result<OpenSplit> {
    if !(seen_fraction > 0.0 && seen_fraction <= 1.0) {
        return Err(DocError::input(format!(
            "seen fraction {seen_fraction} outside (0, 1]"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, doc) in dataset.iter().enumerate() {
        by_class.entry(doc.label.as_str()).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(DocError::input("dataset needs at least two classes"));
    }
    let seen_count = (seen_fraction * by_class.len() as f64).round() as usize;
    if seen_count < 2 {
        return Err(DocError::input(format!(
            "seen fraction {seen_fraction} of {} classes leaves {seen_count} seen classes; need at least 2",
            by_class.len()
        )));
    }

    let mut names: Vec<&str> = by_class.keys().copied().collect();
    names.shuffle(&mut stream_rng(rep_seed, 0));
    let seen: BTreeSet<&str> = names[..seen_count].iter().copied().collect();

    let mut split = OpenSplit {
        seen_classes: seen.iter().map(|s| s.to_string()).collect(),
        unseen_classes: names[seen_count..].iter().map(|s| s.to_string()).collect(),
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    split.unseen_classes.sort();

    for (ci, (name, docs)) in by_class.iter().enumerate() {
        let mut docs = docs.clone();
        docs.shuffle(&mut stream_rng(rep_seed, 1 + ci as u64));
        let n = docs.len();
        let n_test = n * 3 / 10;
        let n_val = n / 10;
        split.test.extend_from_slice(&docs[..n_test]);
        if seen.contains(name) {
            split.validation.extend_from_slice(&docs[n_test..n_test + n_val]);
            split.train.extend_from_slice(&docs[n_test + n_val..]);
        }
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Encoded documents of one split plus its class lists.
#[derive(Clone, Debug)]
pub struct EncodedSplit {
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub train: Vec<EncodedDocument>,
    pub validation: Vec<EncodedDocument>,
    pub test: Vec<EncodedDocument>,
}

/// The part of a split training is allowed to see.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub train: &'a [EncodedDocument],
    pub validation: &'a [EncodedDocument],
    pub num_classes: usize,
}

impl EncodedSplit {
    pub fn num_classes(&self) -> usize {
        self.seen_classes.len()
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            train: &self.train,
            validation: &self.validation,
            num_classes: self.seen_classes.len(),
        }
    }
}

impl OpenSplit {
    pub fn gold_for(&self, label: &str) -> Gold {
        match self.seen_classes.iter().position(|c| c == label) {
            Some(i) => Gold::Seen(i),
            None => Gold::Unseen,
        }
    }

    /// Builds a vocabulary from the training documents only.
    pub fn build_vocab(&self, dataset: &[LabeledText], max_size: usize) -> Result<Vocabulary> {
        let tokenized: Vec<Vec<String>> =
            self.train.iter().map(|&i| tokenize(&dataset[i].text)).collect();
        Vocabulary::build(&tokenized, max_size)
    }

    pub fn encode(&self, dataset: &[LabeledText], vocab: &Vocabulary, doc_len: usize) -> EncodedSplit {
        let encode = |indices: &[usize]| -> Vec<EncodedDocument> {
            indices
                .iter()
                .map(|&i| EncodedDocument {
                    ids: vocab.encode_text(&dataset[i].text, doc_len),
                    label: dataset[i].label.clone(),
                    gold: self.gold_for(&dataset[i].label),
                })
                .collect()
        };
        EncodedSplit {
            seen_classes: self.seen_classes.clone(),
            unseen_classes: self.unseen_classes.clone(),
            train: encode(&self.train),
            validation: encode(&self.validation),
            test: encode(&self.test),
        }
    }

    /// JSON manifest of document indices and class lists.
    pub fn to_manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
