//! Versioned binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DOCM" | u32 version | section*
//! section = [u8; 4] tag | u64 payload length | payload
//! ```
//!
//! Sections appear in the order `CONF`, `VOCB`, `CLSS`, `PARM` and an
//! optional trailing `THRS`. Floats are stored as little-endian `f64`, so a
//! save → load → save cycle is byte-identical.

use std::path::Path;

use crate::calibration::ThresholdVector;
use crate::data::Vocabulary;
use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{DocError, Result};
use crate::head::HeadKind;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DOCM";
pub const VERSION: u32 = 1;

/// Everything needed to classify raw text.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub head: HeadKind,
    pub vocab: Vocabulary,
    /// Seen class names; position is the class index.
    pub classes: Vec<String>,
    pub params: ModelParams,
    pub thresholds: Option<ThresholdVector>,
}

impl ModelFile {
    pub fn config(&self) -> &EncoderConfig {
        &self.params.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());

        let cfg = self.config();
        let mut w = Writer::default();
        w.u8(match self.head {
            HeadKind::OneVsRest => 0,
            HeadKind::Softmax => 1,
        });
        w.u8(u8::from(cfg.conv_relu));
        for v in [
            cfg.vocab_size,
            cfg.embed_dim,
            cfg.filters_per_width,
            cfg.hidden_dim,
            cfg.num_classes,
            cfg.doc_len,
        ] {
            w.usize(v);
        }
        w.usize(cfg.filter_widths.len());
        cfg.filter_widths.iter().for_each(|&fw| w.usize(fw));
        section(&mut out, b"CONF", w.0);

        let mut w = Writer::default();
        w.strings(self.vocab.tokens());
        section(&mut out, b"VOCB", w.0);

        let mut w = Writer::default();
        w.strings(&self.classes);
        section(&mut out, b"CLSS", w.0);

        let mut w = Writer::default();
        let tensors = self.params.tensors();
        w.usize(tensors.len());
        for t in tensors {
            w.usize(t.shape().len());
            t.shape().iter().for_each(|&d| w.usize(d));
            t.data().iter().for_each(|&x| w.f64(x));
        }
        section(&mut out, b"PARM", w.0);

        if let Some(tv) = &self.thresholds {
            let mut w = Writer::default();
            w.f64(tv.alpha);
            w.usize(tv.thresholds.len());
            tv.thresholds.iter().for_each(|&x| w.f64(x));
            tv.sigmas.iter().for_each(|&x| w.f64(x));
            section(&mut out, b"THRS", w.0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(bad("not a model file (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!(
                "unsupported model file version {version} (this build reads version {VERSION})"
            )));
        }

        let mut conf = r.section(b"CONF")?;
        let head = match conf.u8()? {
            0 => HeadKind::OneVsRest,
            1 => HeadKind::Softmax,
            h => return Err(bad(format!("unknown head kind {h}"))),
        };
        let conv_relu = match conf.u8()? {
            0 => false,
            1 => true,
            v => return Err(bad(format!("invalid flag byte {v}"))),
        };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = conf.usize()?;
        }
        let n_widths = conf.len_prefix(8)?;
        let filter_widths = (0..n_widths).map(|_| conf.usize()).collect::<Result<Vec<_>>>()?;
        conf.finish()?;
        let config = EncoderConfig {
            vocab_size: dims[0],
            embed_dim: dims[1],
            filter_widths,
            filters_per_width: dims[2],
            hidden_dim: dims[3],
            num_classes: dims[4],
            doc_len: dims[5],
            conv_relu,
        };
        config.validate().map_err(|e| bad(e.to_string()))?;

        let mut vocab_sec = r.section(b"VOCB")?;
        let vocab = Vocabulary::from_tokens(vocab_sec.strings()?)?;
        vocab_sec.finish()?;
        if vocab.len() != config.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} tokens, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }

        let mut class_sec = r.section(b"CLSS")?;
        let classes = class_sec.strings()?;
        class_sec.finish()?;
        if classes.len() != config.num_classes {
            return Err(bad(format!(
                "{} class names for {} classes",
                classes.len(),
                config.num_classes
            )));
        }

        let mut parm = r.section(b"PARM")?;
        let n_tensors = parm.len_prefix(8)?;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let ndim = parm.len_prefix(8)?;
            let shape = (0..ndim).map(|_| parm.usize()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad("tensor size overflows"))?;
            if n > parm.remaining() / 8 {
                return Err(bad("tensor data truncated"));
            }
            let data = (0..n).map(|_| parm.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape, data)?);
        }
        parm.finish()?;
        let params = ModelParams::from_tensors(config, tensors)?;

        let thresholds = if r.remaining() > 0 {
            let mut thrs = r.section(b"THRS")?;
            let alpha = thrs.f64()?;
            let m = thrs.len_prefix(16)?;
            let t = (0..m).map(|_| thrs.f64()).collect::<Result<Vec<_>>>()?;
            let s = (0..m).map(|_| thrs.f64()).collect::<Result<Vec<_>>>()?;
            thrs.finish()?;
            if m != params.num_classes() {
                return Err(bad(format!("{m} thresholds for {} classes", params.num_classes())));
            }
            Some(ThresholdVector {
                thresholds: t,
                sigmas: s,
                alpha,
            })
        } else {
            None
        };
        r.finish()?;

        Ok(ModelFile {
            head,
            vocab,
            classes,
            params,
            thresholds,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn bad(msg: impl Into<String>) -> DocError {
    DocError::format(None, msg)
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: Vec<u8>) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn usize(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn strings(&mut self, items: &[String]) {
        self.usize(items.len());
        for s in items {
            self.usize(s.len());
            self.0.extend_from_slice(s.as_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(bad("unexpected end of model file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("length does not fit in memory"))
    }

    /// Reads a count and checks that `count × min_item` bytes remain.
    fn len_prefix(&mut self, min_item: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_item) > self.remaining() {
            return Err(bad("count exceeds remaining data"));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.len_prefix(8)?;
        (0..n)
            .map(|_| {
                let len = self.usize()?;
                let bytes = self.take(len)?;
                String::from_utf8(bytes.to_vec()).map_err(|_| bad("string is not UTF-8"))
            })
            .collect()
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        let found = self.take(4)?;
        if found != tag {
            return Err(bad(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = self.usize()?;
        Ok(Reader::new(self.take(len)?))
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(bad(format!("{} unexpected trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
