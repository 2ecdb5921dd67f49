//! The convolutional document encoder.
//!
//! embedding → one valid convolution per filter width → ReLU →
//! max-over-time pooling → concatenation (ascending width) into `h` →
//! `d = W'·ReLU(W·h + b) + b'`.

use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, PAD_ID};
use crate::error::{DocError, Result};
use crate::rng::stream_rng;
use crate::tensor::{Tape, Tensor, Var};

const MAX_DIM: usize = 1 << 24;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Convolution widths, kept in ascending order.
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub doc_len: usize,
    /// Apply ReLU to convolution outputs before pooling.
    pub conv_relu: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 5000,
            embed_dim: 50,
            filter_widths: vec![3, 4, 5],
            filters_per_width: 150,
            hidden_dim: 250,
            num_classes: 2,
            doc_len: 200,
            conv_relu: true,
        }
    }
}

impl EncoderConfig {
    /// Pooled feature dimension `k`.
    pub fn feature_dim(&self) -> usize {
        self.filters_per_width * self.filter_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DocError::input(format!("invalid encoder config: {msg}")));
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return bad("filter widths must be non-empty and positive");
        }
        if self.filter_widths.windows(2).any(|w| w[0] >= w[1]) {
            return bad("filter widths must be strictly ascending");
        }
        if self.vocab_size < 1
            || self.embed_dim < 1
            || self.filters_per_width < 1
            || self.hidden_dim < 1
        {
            return bad("all dimensions must be at least 1");
        }
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.filters_per_width,
            self.hidden_dim,
            self.num_classes,
            self.doc_len,
            self.filter_widths.len(),
        ];
        if dims.iter().chain(&self.filter_widths).any(|&d| d > MAX_DIM) {
            return bad("dimension exceeds 2^24");
        }
        if self.num_classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.doc_len < *self.filter_widths.last().unwrap() {
            return bad("document length shorter than the widest filter");
        }
        Ok(())
    }

    /// Shapes of every parameter tensor, in [`ModelParams::tensors`] order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![self.vocab_size, self.embed_dim]];
        for &w in &self.filter_widths {
            shapes.push(vec![self.filters_per_width, w, self.embed_dim]);
            shapes.push(vec![self.filters_per_width]);
        }
        shapes.push(vec![self.hidden_dim, self.feature_dim()]);
        shapes.push(vec![self.hidden_dim]);
        shapes.push(vec![self.num_classes, self.hidden_dim]);
        shapes.push(vec![self.num_classes]);
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// `F × w × e`
    pub filters: Tensor,
    pub bias: Tensor,
}

/// All trainable arrays of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub embedding: Tensor,
    pub convs: Vec<ConvParams>,
    pub hidden_weight: Tensor,
    pub hidden_bias: Tensor,
    pub output_weight: Tensor,
    pub output_bias: Tensor,
}

impl ModelParams {
    /// Random initialization: embeddings uniform in [−0.25, 0.25] with a
    /// zero padding row, weights Glorot-uniform, biases zero.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, 0x1417);
        let mut uniform = |shape: &[usize], scale: f64| -> Tensor {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches")
        };
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();

        let mut embedding = uniform(&[config.vocab_size, config.embed_dim], 0.25);
        embedding.row_mut(PAD_ID).fill(0.0);
        let convs = config
            .filter_widths
            .iter()
            .map(|&w| ConvParams {
                filters: uniform(
                    &[config.filters_per_width, w, config.embed_dim],
                    glorot(w * config.embed_dim, config.filters_per_width),
                ),
                bias: Tensor::zeros(&[config.filters_per_width]),
            })
            .collect();
        let k = config.feature_dim();
        let hidden_weight = uniform(&[config.hidden_dim, k], glorot(k, config.hidden_dim));
        let output_weight = uniform(
            &[config.num_classes, config.hidden_dim],
            glorot(config.hidden_dim, config.num_classes),
        );
        Ok(ModelParams {
            config: config.clone(),
            embedding,
            convs,
            hidden_weight,
            hidden_bias: Tensor::zeros(&[config.hidden_dim]),
            output_weight,
            output_bias: Tensor::zeros(&[config.num_classes]),
        })
    }

    /// Parameters with every entry zero.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        Self::from_tensors(
            config.clone(),
            config.param_shapes().iter().map(|s| Tensor::zeros(s)).collect(),
        )
    }

    /// Assembles parameters from tensors in [`ModelParams::tensors`] order,
    /// checking every shape against `config`.
    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if tensors.len() != shapes.len() {
            return Err(DocError::format(
                None,
                format!("expected {} parameter tensors, got {}", shapes.len(), tensors.len()),
            ));
        }
        for (i, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(DocError::format(
                    None,
                    format!("parameter {i} has shape {:?}, expected {s:?}", t.shape()),
                ));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let embedding = next();
        let convs = (0..config.filter_widths.len())
            .map(|_| ConvParams {
                filters: next(),
                bias: next(),
            })
            .collect();
        Ok(ModelParams {
            embedding,
            convs,
            hidden_weight: next(),
            hidden_bias: next(),
            output_weight: next(),
            output_bias: next(),
            config,
        })
    }

    /// Every parameter tensor in a fixed order: embedding, per-width filters
    /// and bias (ascending width), hidden weight and bias, output weight and
    /// bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for c in &self.convs {
            out.push(&c.filters);
            out.push(&c.bias);
        }
        out.extend([
            &self.hidden_weight,
            &self.hidden_bias,
            &self.output_weight,
            &self.output_bias,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for c in &mut self.convs {
            out.push(&mut c.filters);
            out.push(&mut c.bias);
        }
        out.extend([
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ]);
        out
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Records the forward pass on `tape`. Returns the parameter handles (in
    /// [`ModelParams::tensors`] order) and the logit node.
    pub fn record<'p>(&'p self, tape: &mut Tape<'p>, doc: &[usize]) -> Result<(Vec<Var>, Var)> {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        let logits = record_forward(tape, &self.config, &vars, doc)?;
        Ok((vars, logits))
    }

    /// Logits `d` for one document.
    pub fn forward(&self, doc: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (_, logits) = self.record(&mut tape, doc)?;
        Ok(tape.value(logits).data().to_vec())
    }
}

/// Records the forward graph given parameter handles in
/// [`ModelParams::tensors`] order.
pub fn record_forward(
    tape: &mut Tape<'_>,
    config: &EncoderConfig,
    vars: &[Var],
    doc: &[usize],
) -> Result<Var> {
    if doc.len() != config.doc_len {
        return Err(DocError::input(format!(
            "document has {} tokens, model expects {}",
            doc.len(),
            config.doc_len
        )));
    }
    let embedded = tape.embed(doc, vars[0])?;
    let mut pooled = Vec::with_capacity(config.filter_widths.len());
    for i in 0..config.filter_widths.len() {
        let conv = tape.conv1d_valid(embedded, vars[1 + 2 * i], vars[2 + 2 * i])?;
        let activated = if config.conv_relu { tape.relu(conv) } else { conv };
        pooled.push(tape.max_over_time(activated)?);
    }
    let h = tape.concat(&pooled)?;
    let base = 1 + 2 * config.filter_widths.len();
    let hidden = tape.dense(h, vars[base], vars[base + 1])?;
    let hidden = tape.relu(hidden);
    tape.dense(hidden, vars[base + 2], vars[base + 3])
}

/// Overwrites embedding rows from a whitespace-separated word-vector stream
/// (`token v1 ... ve` per line). Tokens missing from `vocab` are skipped and
/// the padding row is never touched. Returns the number of rows replaced.
pub fn load_pretrained_embeddings<R: BufRead>(
    params: &mut ModelParams,
    source: R,
    vocab: &Vocabulary,
) -> Result<usize> {
    let dim = params.config.embed_dim;
    if vocab.len() != params.config.vocab_size {
        return Err(DocError::input(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    let mut replaced = 0;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DocError::format(Some(i + 1), format!("bad vector value: {e}")))?;
        if values.len() != dim {
            return Err(DocError::format(
                Some(i + 1),
                format!("expected {dim} values for {token:?}, found {}", values.len()),
            ));
        }
        if let Some(id) = vocab.id(token).filter(|&id| id != PAD_ID) {
            params.embedding.row_mut(id).copy_from_slice(&values);
            replaced += 1;
        }
    }
    Ok(replaced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 10,
            embed_dim: 4,
            filter_widths: vec![2],
            filters_per_width: 3,
            hidden_dim: 5,
            num_classes: 2,
            doc_len: 6,
            conv_relu: true,
        }
    }

    /// Straight-line re-implementation with explicit loops and no tape.
    fn reference_forward(p: &ModelParams, doc: &[usize]) -> Vec<f64> {
        let c = &p.config;
        let e = c.embed_dim;
        let x: Vec<Vec<f64>> = doc
            .iter()
            .map(|&id| p.embedding.data()[id * e..(id + 1) * e].to_vec())
            .collect();
        let mut h = Vec::new();
        for (wi, &w) in c.filter_widths.iter().enumerate() {
            let conv = &p.convs[wi];
            for f in 0..c.filters_per_width {
                let mut best = f64::NEG_INFINITY;
                for t in 0..=(doc.len() - w) {
                    let mut s = conv.bias.data()[f];
                    for j in 0..w {
                        for ch in 0..e {
                            s += x[t + j][ch] * conv.filters.data()[f * w * e + j * e + ch];
                        }
                    }
                    let s = if c.conv_relu { s.max(0.0) } else { s };
                    best = best.max(s);
                }
                h.push(best);
            }
        }
        let k = h.len();
        let hidden: Vec<f64> = (0..c.hidden_dim)
            .map(|i| {
                let s: f64 = (0..k).map(|j| p.hidden_weight.data()[i * k + j] * h[j]).sum();
                (s + p.hidden_bias.data()[i]).max(0.0)
            })
            .collect();
        (0..c.num_classes)
            .map(|i| {
                let s: f64 = (0..c.hidden_dim)
                    .map(|j| p.output_weight.data()[i * c.hidden_dim + j] * hidden[j])
                    .sum();
                s + p.output_bias.data()[i]
            })
            .collect()
    }

    #[test]
    fn init_is_deterministic_and_pads_zero() {
        let a = ModelParams::init(&tiny(), 1).unwrap();
        let b = ModelParams::init(&tiny(), 1).unwrap();
        let c = ModelParams::init(&tiny(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.embedding.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert!(a.embedding.data().iter().all(|v| v.abs() <= 0.25));
        let s = (6.0f64 / (2 * 4 + 3) as f64).sqrt();
        assert!(a.convs[0].filters.data().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = ModelParams::zeros(&tiny()).unwrap();
        assert_eq!(p.forward(&[3, 4, 5, 0, 0, 0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_reference_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for seed in 0..10 {
            let mut cfg = tiny();
            cfg.conv_relu = seed % 2 == 0;
            let mut p = ModelParams::init(&cfg, seed).unwrap();
            // Non-zero biases exercise every term.
            for t in p.tensors_mut() {
                if t.shape().len() == 1 {
                    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
                }
            }
            let doc: Vec<usize> = (0..6).map(|_| rng.gen_range(0..10)).collect();
            let got = p.forward(&doc).unwrap();
            let want = reference_forward(&p, &doc);
            assert_eq!(got.len(), 2);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn forward_is_pure_and_sensitive() {
        let p = ModelParams::init(&tiny(), 7).unwrap();
        let doc = vec![2, 3, 4, 5, 6, 7];
        assert_eq!(p.forward(&doc).unwrap(), p.forward(&doc).unwrap());
        let base = p.forward(&doc).unwrap();
        let changed = (0..doc.len()).any(|pos| {
            let mut d = doc.clone();
            d[pos] = 9;
            p.forward(&d).unwrap() != base
        });
        assert!(changed);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let p = ModelParams::init(&tiny(), 7).unwrap();
        assert!(matches!(p.forward(&[1, 2, 3]), Err(DocError::Input(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.doc_len = 1;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.filter_widths = vec![3, 2];
        assert!(c.validate().is_err());
        assert_eq!(EncoderConfig::default().feature_dim(), 450);
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = ModelParams::init(&tiny(), 3).unwrap();
        let tensors: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        assert_eq!(ModelParams::from_tensors(tiny(), tensors.clone()).unwrap(), p);
        let mut bad = tensors;
        bad[1] = Tensor::zeros(&[3, 3, 4]);
        assert!(ModelParams::from_tensors(tiny(), bad).is_err());
    }

    fn vocab() -> Vocabulary {
        Vocabulary::build([&tokenize("alpha beta gamma")], 10).unwrap()
    }

    fn vocab_config(v: &Vocabulary) -> EncoderConfig {
        EncoderConfig {
            vocab_size: v.len(),
            ..tiny()
        }
    }

    #[test]
    fn pretrained_rows_are_copied() {
        let v = vocab();
        let mut p = ModelParams::init(&vocab_config(&v), 1).unwrap();
        let before = p.clone();
        let n = load_pretrained_embeddings(&mut p, "zzz 1 2 3 4\n".as_bytes(), &v).unwrap();
        assert_eq!(n, 0);
        assert_eq!(p, before);

        let n = load_pretrained_embeddings(&mut p, "beta 0.5 -1 2.25 3\n\n".as_bytes(), &v).unwrap();
        assert_eq!(n, 1);
        assert_eq!(p.embedding.row(v.id("beta").unwrap()), &[0.5, -1.0, 2.25, 3.0]);

        let n = load_pretrained_embeddings(&mut p, "<pad> 1 1 1 1\n".as_bytes(), &v).unwrap();
        assert_eq!(n, 0);
        assert!(p.embedding.row(PAD_ID).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pretrained_dimension_mismatch_names_line() {
        let v = vocab();
        let mut p = ModelParams::init(&vocab_config(&v), 1).unwrap();
        let err = load_pretrained_embeddings(&mut p, "alpha 1 2 3 4\nbeta 1 2 3\n".as_bytes(), &v)
            .unwrap_err();
        assert!(matches!(err, DocError::Format { line: Some(2), .. }), "{err}");
        let err = load_pretrained_embeddings(&mut p, "alpha 1 x 3 4\n".as_bytes(), &v).unwrap_err();
        assert!(matches!(err, DocError::Format { line: Some(1), .. }));
    }
}
