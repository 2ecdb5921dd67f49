//! Dense `f64` tensors and a small reverse-mode gradient tape.
//!
//! Only the operations the open-world text CNN needs are provided:
//! embedding lookup, valid 1-D convolution, max-over-time pooling, dense
//! layers, ReLU, sigmoid, concatenation and summation. A tape records the
//! operations of a single forward pass; [`Tape::backward`] then walks the
//! recorded nodes in exact reverse order.
//!
//! ```
//! use doc_open::tensor::{Tape, Tensor};
//!
//! let weight = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
//! let bias = Tensor::from_vec(vec![3.0]);
//! let mut tape = Tape::new();
//! let x = tape.constant(Tensor::from_vec(vec![4.0, 5.0]));
//! let w = tape.leaf(&weight);
//! let b = tape.leaf(&bias);
//! let y = tape.dense(x, w, b).unwrap();
//! assert_eq!(tape.value(y).data(), &[17.0]);
//!
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(w).data(), &[4.0, 5.0]);
//! ```

use crate::error::{DocError, Result};

/// Row-major dense array of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DocError::input(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// One-dimensional tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Zero-dimensional tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a tensor viewed as `shape[0] × rest`.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.len() / self.shape[0].max(1);
        &self.data[i * width..(i + 1) * width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let width = self.len() / self.shape[0].max(1);
        &mut self.data[i * width..(i + 1) * width]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Numerically stable logistic function.
///
/// The result is clamped to `[f64::MIN_POSITIVE, 1 - f64::EPSILON / 2]` so
/// that it stays strictly inside `(0, 1)` even where the exact value is not
/// representable.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Embed { table: usize, ids: Vec<usize> },
    Conv1d { input: usize, filters: usize, bias: usize },
    MaxOverTime { input: usize, argmax: Vec<usize> },
    Dense { input: usize, weight: usize, bias: usize },
    Relu { input: usize },
    Sigmoid { input: usize },
    Concat { parts: Vec<usize> },
    Sum { input: usize },
    Scalar { input: usize, grad: Tensor },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
}

/// Records a forward pass so it can be differentiated.
///
/// Parameters are borrowed for the lifetime of the tape, so recording a pass
/// never copies weight matrices.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'p>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed tensor (typically a trainable parameter).
    pub fn leaf(&mut self, tensor: &'p Tensor) -> Var {
        self.push(Value::Borrowed(tensor), Op::Leaf)
    }

    /// Records an owned input tensor.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(Value::Owned(tensor), Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.nodes[var.0].value.get()
    }

    /// Looks up rows of a `V × e` table. Row 0 is the padding row and never
    /// receives gradient.
    pub fn embed(&mut self, ids: &[usize], table: Var) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(DocError::input("embedding table must be 2-D"));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(DocError::input(format!(
                    "token id {id} out of range for vocabulary of {vocab}"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor {
            shape: vec![ids.len(), dim],
            data,
        };
        Ok(self.push(
            Value::Owned(out),
            Op::Embed {
                table: table.0,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Valid (unpadded) 1-D convolution of an `L × e` input with `F × w × e`
    /// filters, producing `(L − w + 1) × F`.
    pub fn conv1d_valid(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(filters), self.value(bias));
        if x.shape().len() != 2 || k.shape().len() != 3 || b.shape().len() != 1 {
            return Err(DocError::input("conv1d expects L×e input, F×w×e filters, F bias"));
        }
        let (len, dim) = (x.shape()[0], x.shape()[1]);
        let (count, width) = (k.shape()[0], k.shape()[1]);
        if k.shape()[2] != dim || b.len() != count {
            return Err(DocError::input(format!(
                "conv1d shape mismatch: input {:?}, filters {:?}, bias {:?}",
                x.shape(),
                k.shape(),
                b.shape()
            )));
        }
        if len < width {
            return Err(DocError::input(format!(
                "input length {len} shorter than filter width {width}"
            )));
        }
        let steps = len - width + 1;
        let span = width * dim;
        let mut out = vec![0.0; steps * count];
        for t in 0..steps {
            let window = &x.data()[t * dim..t * dim + span];
            let row = &mut out[t * count..(t + 1) * count];
            if window.iter().all(|&v| v == 0.0) {
                // Fully padded window: every dot product is zero.
                row.copy_from_slice(b.data());
                continue;
            }
            for (f, o) in row.iter_mut().enumerate() {
                *o = b.data()[f] + dot(window, &k.data()[f * span..(f + 1) * span]);
            }
        }
        let out = Tensor {
            shape: vec![steps, count],
            data: out,
        };
        Ok(self.push(
            Value::Owned(out),
            Op::Conv1d {
                input: input.0,
                filters: filters.0,
                bias: bias.0,
            },
        ))
    }

    /// Column-wise maximum of a `T × F` tensor. Ties go to the lowest index.
    pub fn max_over_time(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.shape().len() != 2 {
            return Err(DocError::input("max_over_time expects a 2-D tensor"));
        }
        let (steps, cols) = (x.shape()[0], x.shape()[1]);
        if steps == 0 {
            return Err(DocError::input("max_over_time over zero time steps"));
        }
        let mut best = x.row(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for t in 1..steps {
            for (f, &v) in x.row(t).iter().enumerate() {
                if v > best[f] {
                    best[f] = v;
                    argmax[f] = t;
                }
            }
        }
        Ok(self.push(
            Value::Owned(Tensor::from_vec(best)),
            Op::MaxOverTime {
                input: input.0,
                argmax,
            },
        ))
    }

    /// `weight · input + bias` with `weight` of shape `b × a`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if w.shape().len() != 2
            || x.shape() != [w.shape()[1]]
            || b.shape() != [w.shape()[0]]
        {
            return Err(DocError::input(format!(
                "dense shape mismatch: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let out: Vec<f64> = (0..w.shape()[0])
            .map(|i| b.data()[i] + dot(w.row(i), x.data()))
            .collect();
        Ok(self.push(
            Value::Owned(Tensor::from_vec(out)),
            Op::Dense {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push(Value::Owned(out), Op::Relu { input: input.0 })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| sigmoid(v)).collect(),
        };
        self.push(Value::Owned(out), Op::Sigmoid { input: input.0 })
    }

    /// Concatenates 1-D tensors in the given order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.shape().len() != 1 {
                return Err(DocError::input("concat expects 1-D tensors"));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Value::Owned(Tensor::from_vec(data)),
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        ))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().sum();
        self.push(Value::Owned(Tensor::scalar(total)), Op::Sum { input: input.0 })
    }

    /// Records a scalar function of `input` whose value and gradient were
    /// computed outside the tape (used for the loss heads).
    pub fn scalar_fn(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.value(input).shape() {
            return Err(DocError::input(format!(
                "gradient shape {:?} does not match input {:?}",
                grad.shape(),
                self.value(input).shape()
            )));
        }
        Ok(self.push(
            Value::Owned(Tensor::scalar(value)),
            Op::Scalar {
                input: input.0,
                grad,
            },
        ))
    }

    /// Back-propagates from a scalar `root`. Nodes that do not lie on a path
    /// to `root` get an all-zero gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(DocError::input(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Tensor::zeros(self.value(root).shape());
        seed.data[0] = 1.0;
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.get().shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut accumulate = |target: usize, delta: Tensor| match &mut grads[target] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Embed { table, ids } => {
                let t = self.nodes[*table].value.get();
                let dim = t.shape()[1];
                let mut d = Tensor::zeros(t.shape());
                for (j, &id) in ids.iter().enumerate() {
                    if id == 0 {
                        continue;
                    }
                    axpy(1.0, &g.data[j * dim..(j + 1) * dim], d.row_mut(id));
                }
                accumulate(*table, d);
            }
            Op::Conv1d {
                input,
                filters,
                bias,
            } => {
                let x = self.nodes[*input].value.get();
                let k = self.nodes[*filters].value.get();
                let dim = x.shape()[1];
                let count = k.shape()[0];
                let span = k.shape()[1] * dim;
                let steps = g.shape()[0];
                let mut dx = Tensor::zeros(x.shape());
                let mut dk = Tensor::zeros(k.shape());
                let mut db = Tensor::zeros(&[count]);
                for t in 0..steps {
                    for f in 0..count {
                        let gv = g.data[t * count + f];
                        if gv == 0.0 {
                            continue;
                        }
                        db.data[f] += gv;
                        let window = &x.data[t * dim..t * dim + span];
                        axpy(gv, window, &mut dk.data[f * span..(f + 1) * span]);
                        axpy(
                            gv,
                            &k.data[f * span..(f + 1) * span],
                            &mut dx.data[t * dim..t * dim + span],
                        );
                    }
                }
                accumulate(*input, dx);
                accumulate(*filters, dk);
                accumulate(*bias, db);
            }
            Op::MaxOverTime { input, argmax } => {
                let x = self.nodes[*input].value.get();
                let cols = x.shape()[1];
                let mut dx = Tensor::zeros(x.shape());
                for (f, &t) in argmax.iter().enumerate() {
                    dx.data[t * cols + f] += g.data[f];
                }
                accumulate(*input, dx);
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.nodes[*input].value.get();
                let w = self.nodes[*weight].value.get();
                let mut dx = Tensor::zeros(x.shape());
                let mut dw = Tensor::zeros(w.shape());
                for (i, &gi) in g.data.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    axpy(gi, w.row(i), &mut dx.data);
                    axpy(gi, &x.data, dw.row_mut(i));
                }
                accumulate(*input, dx);
                accumulate(*weight, dw);
                accumulate(*bias, g.clone());
            }
            Op::Relu { input } => {
                let x = self.nodes[*input].value.get();
                let data = x
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(
                    *input,
                    Tensor {
                        shape: x.shape.clone(),
                        data,
                    },
                );
            }
            Op::Sigmoid { input } => {
                let s = node.value.get();
                let data = s
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&p, &gv)| gv * p * (1.0 - p))
                    .collect();
                accumulate(
                    *input,
                    Tensor {
                        shape: s.shape.clone(),
                        data,
                    },
                );
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.get().len();
                    accumulate(p, Tensor::from_vec(g.data[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::Sum { input } => {
                let x = self.nodes[*input].value.get();
                accumulate(
                    *input,
                    Tensor {
                        shape: x.shape.clone(),
                        data: vec![g.data[0]; x.len()],
                    },
                );
            }
            Op::Scalar { input, grad } => {
                let mut d = grad.clone();
                d.data.iter_mut().for_each(|v| *v *= g.data[0]);
                accumulate(*input, d);
            }
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; all zeros if `var` does not reach the root.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Moves the gradient for `var` out, leaving zeros in its place.
    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

/// Compares analytic gradients against central finite differences.
///
/// `f` maps the parameter set to a scalar output and its analytic gradient
/// with respect to every parameter. Returns the maximum over all parameter
/// entries of `|analytic − numeric| / max(|analytic|, |numeric|, 1e−8)`.
pub fn grad_check<F>(params: &[Tensor], eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<(Tensor, Vec<Tensor>)>,
{
    if !(eps > 0.0) {
        return Err(DocError::input("grad_check eps must be positive"));
    }
    let (out, analytic) = f(params)?;
    if out.len() != 1 {
        return Err(DocError::input(format!(
            "grad_check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    if analytic.len() != params.len()
        || analytic.iter().zip(params).any(|(a, p)| a.shape() != p.shape())
    {
        return Err(DocError::input("analytic gradients do not match parameter shapes"));
    }
    let scalar_at = |f: &mut F, ps: &[Tensor]| -> Result<f64> { Ok(f(ps)?.0.data()[0]) };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for p in 0..work.len() {
        for i in 0..work[p].len() {
            let orig = work[p].data[i];
            work[p].data[i] = orig + eps;
            let plus = scalar_at(&mut f, &work)?;
            work[p].data[i] = orig - eps;
            let minus = scalar_at(&mut f, &work)?;
            work[p].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
