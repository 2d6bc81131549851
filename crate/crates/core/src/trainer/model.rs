//! Single-head attention classifier with hand-written gradients.
//!
//! tokens -> embedding rows X -> Q, K, V = X Wq, X Wk, X Wv -> attention ->
//! mean over positions -> linear head -> softmax cross-entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_scores, baseline_attention, flash_attention, BlockGeometry, Variant};
use crate::error::{Error, Result};
use crate::linalg::{carrier_draw, matmul, matmul_transposed, softmax_rows, InputDistribution, Matrix};
use crate::numerics::{Arithmetic, FloatFormat};

/// Synthetic sequence-classification task.
///
/// Token `t` belongs to class `t % classes`. Each example draws a label, then
/// fills every position with a token of that class with probability
/// `signal_prob`, and with a uniformly random token otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub vocab: usize,
    pub seq_len: usize,
    pub head_dim: usize,
    pub classes: usize,
    pub examples: usize,
    pub batch_size: usize,
    pub signal_prob: f64,
    pub data_seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            vocab: 16,
            seq_len: 8,
            head_dim: 8,
            classes: 4,
            examples: 64,
            batch_size: 16,
            signal_prob: 0.5,
            data_seed: 1234,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.seq_len == 0 || self.head_dim == 0 || self.examples == 0 {
            return Err(Error::invalid("task dimensions must be >= 1"));
        }
        if self.classes < 2 || self.classes > self.vocab {
            return Err(Error::invalid("task needs 2 <= classes <= vocab"));
        }
        if self.batch_size == 0 || self.batch_size > self.examples {
            return Err(Error::invalid("batch_size must lie in [1, examples]"));
        }
        if !(0.0..=1.0).contains(&self.signal_prob) {
            return Err(Error::invalid("signal_prob must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The full deterministic dataset for `data_seed`.
    pub fn dataset(&self) -> Vec<Example> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.data_seed);
        let per_class = self.vocab.div_ceil(self.classes);
        (0..self.examples)
            .map(|_| {
                let label = rng.random_range(0..self.classes);
                let tokens = (0..self.seq_len)
                    .map(|_| {
                        if rng.random_bool(self.signal_prob) {
                            loop {
                                let t = label + self.classes * rng.random_range(0..per_class);
                                if t < self.vocab {
                                    break t;
                                }
                            }
                        } else {
                            rng.random_range(0..self.vocab)
                        }
                    })
                    .collect();
                Example { tokens, label }
            })
            .collect()
    }

    /// Batch used at optimizer step `step` (cycles through the dataset in order).
    pub fn batch<'a>(&self, data: &'a [Example], step: usize) -> &'a [Example] {
        let batches = data.len() / self.batch_size;
        let start = (step % batches) * self.batch_size;
        &data[start..start + self.batch_size]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

pub const TENSOR_NAMES: [&str; 5] = ["embed", "wq", "wk", "wv", "head"];

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub embed: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub head: Matrix,
}

impl ToyModel {
    /// Seeded initialization. Every format sees quantized copies of one carrier draw.
    pub fn init(task: &TaskSpec, seed: u64, init_scale: f64, fmt: FloatFormat) -> Result<Self> {
        let d = task.head_dim;
        let draw = |rows, cols, stream, std: f64| -> Result<Matrix> {
            let raw = carrier_draw(rows, cols, seed, stream, InputDistribution::StandardNormal)?;
            Matrix::from_vec(rows, cols, raw.into_iter().map(|x| x * std).collect(), fmt)
        };
        let proj = 1.0 / (d as f64).sqrt();
        Ok(ToyModel {
            embed: draw(task.vocab, d, 0, init_scale)?,
            wq: draw(d, d, 1, proj)?,
            wk: draw(d, d, 2, proj)?,
            wv: draw(d, d, 3, proj)?,
            head: draw(d, task.classes, 4, init_scale)?,
        })
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 5] {
        [
            ("embed", &self.embed),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("head", &self.head),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 5] {
        [
            ("embed", &mut self.embed),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("head", &mut self.head),
        ]
    }

    pub fn from_tensors(mut tensors: Vec<(String, Matrix)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Matrix> {
            let i = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid(format!("missing tensor {name}")))?;
            Ok(tensors.swap_remove(i).1)
        };
        Ok(ToyModel {
            embed: take("embed")?,
            wq: take("wq")?,
            wk: take("wk")?,
            wv: take("wv")?,
            head: take("head")?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }
}

/// How attention is evaluated inside the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelChoice {
    pub variant: Variant,
    pub geometry: BlockGeometry,
    pub arith: Arithmetic,
}

/// Intermediates of one example's forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ExampleTrace {
    tokens: Vec<usize>,
    label: usize,
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    pooled: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Activations {
    examples: Vec<ExampleTrace>,
}

pub type Gradients = ToyModel;

fn row_matrix(values: Vec<f64>, fmt: FloatFormat) -> Matrix {
    Matrix::from_quantized(1, values.len(), values, fmt)
}

/// Mean cross-entropy over `batch` and the intermediates needed for [`backward`].
///
/// The reported loss is evaluated in the carrier from the rounded logits;
/// the probabilities that drive the gradient are rounded at the kernel format.
pub fn forward_loss(
    model: &ToyModel,
    batch: &[Example],
    kernel: KernelChoice,
) -> Result<(f64, Activations)> {
    let arith = kernel.arith;
    let fmt = arith.format;
    let d = model.embed.cols();
    let mut total = 0.0;
    let mut traces = Vec::with_capacity(batch.len());
    for ex in batch {
        let n = ex.tokens.len();
        let mut xs = Vec::with_capacity(n * d);
        for &t in &ex.tokens {
            if t >= model.embed.rows() {
                return Err(Error::invalid(format!("token {t} outside vocabulary")));
            }
            xs.extend_from_slice(model.embed.row(t));
        }
        let x = Matrix::from_vec(n, d, xs, fmt)?;
        let q = matmul(&x, &model.wq, arith)?;
        let k = matmul(&x, &model.wk, arith)?;
        let v = matmul(&x, &model.wv, arith)?;
        let geometry = kernel.geometry.clamped(n);
        let out = match kernel.variant {
            Variant::Baseline => baseline_attention(&q, &k, &v, arith)?,
            Variant::Flash => flash_attention(&q, &k, &v, arith, geometry)?,
        };
        let pooled: Vec<f64> = (0..d)
            .map(|c| {
                let col: Vec<f64> = (0..n).map(|r| out.get(r, c)).collect();
                arith.div(arith.sum(&col), n as f64)
            })
            .collect();
        let logits = matmul(&row_matrix(pooled.clone(), fmt), &model.head, arith)?;
        let probs = softmax_rows(&logits, arith)?.into_vec();

        let z = logits.as_slice();
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|&l| (l - zmax).exp()).sum::<f64>().ln();
        if ex.label >= z.len() {
            return Err(Error::invalid(format!("label {} outside classes", ex.label)));
        }
        total += lse - z[ex.label];

        traces.push(ExampleTrace {
            tokens: ex.tokens.clone(),
            label: ex.label,
            x,
            q,
            k,
            v,
            pooled,
            probs,
        });
    }
    Ok((total / batch.len() as f64, Activations { examples: traces }))
}

fn add_into(acc: &mut Matrix, g: &Matrix, arith: Arithmetic) {
    let summed: Vec<f64> = acc
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(a, b)| arith.add(*a, *b))
        .collect();
    *acc = Matrix::from_quantized(acc.rows(), acc.cols(), summed, arith.format);
}

fn zip_map(a: &Matrix, b: &Matrix, arith: Arithmetic, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| arith.round(f(*x, *y)))
        .collect();
    Matrix::from_quantized(a.rows(), a.cols(), data, arith.format)
}

/// Analytic gradients of the mean batch loss, every step rounded under `arith`.
///
/// The attention backward uses the full-matrix formulas with probabilities
/// recomputed from `S = Q K^T / sqrt(d)` at the kernel format, whichever
/// variant produced the forward output.
pub fn backward(model: &ToyModel, acts: &Activations, arith: Arithmetic) -> Result<Gradients> {
    let fmt = arith.format;
    let d = model.embed.cols();
    let classes = model.head.cols();
    let batch = acts.examples.len();
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let mut grads = ToyModel {
        embed: Matrix::zeros(model.embed.rows(), d, fmt),
        wq: Matrix::zeros(d, d, fmt),
        wk: Matrix::zeros(d, d, fmt),
        wv: Matrix::zeros(d, d, fmt),
        head: Matrix::zeros(d, classes, fmt),
    };
    let batch_len = batch as f64;
    let scale = arith.round(1.0 / (d as f64).sqrt());
    let head_t = model.head.transpose();

    for tr in &acts.examples {
        if tr.q.cols() != d || tr.probs.len() != classes {
            return Err(Error::Numerical("activation shapes do not match the model".into()));
        }
        let n = tr.tokens.len();
        // softmax cross-entropy: (p - onehot) / batch
        let dlogits: Vec<f64> = tr
            .probs
            .iter()
            .enumerate()
            .map(|(c, &p)| {
                let target = if c == tr.label { 1.0 } else { 0.0 };
                arith.div(arith.sub(p, target), batch_len)
            })
            .collect();
        let dlogits = row_matrix(dlogits, fmt);
        let pooled = row_matrix(tr.pooled.clone(), fmt);
        add_into(&mut grads.head, &matmul(&pooled.transpose(), &dlogits, arith)?, arith);

        // mean pool: every position receives dpooled / n
        let dpooled = matmul(&dlogits, &head_t, arith)?;
        let drow: Vec<f64> = dpooled
            .as_slice()
            .iter()
            .map(|&g| arith.div(g, n as f64))
            .collect();
        let dout = Matrix::from_quantized(n, d, drow.repeat(n), fmt);

        // attention
        let probs = softmax_rows(&attention_scores(&tr.q, &tr.k, arith)?, arith)?;
        let dv = matmul(&probs.transpose(), &dout, arith)?;
        let dprobs = matmul_transposed(&dout, &tr.v, arith)?;
        let mut ds = Vec::with_capacity(n * n);
        for r in 0..n {
            let pr = probs.row(r);
            let gr = dprobs.row(r);
            let weighted: Vec<f64> = pr.iter().zip(gr).map(|(p, g)| arith.mul(*p, *g)).collect();
            let dot = arith.sum(&weighted);
            ds.extend(pr.iter().zip(gr).map(|(p, g)| arith.mul(*p, arith.sub(*g, dot))));
        }
        let ds = Matrix::from_quantized(n, n, ds, fmt);
        let dq = matmul(&ds, &tr.k, arith)?.map(arith, |g| g * scale);
        let dk = matmul(&ds.transpose(), &tr.q, arith)?.map(arith, |g| g * scale);

        // projections
        let xt = tr.x.transpose();
        add_into(&mut grads.wq, &matmul(&xt, &dq, arith)?, arith);
        add_into(&mut grads.wk, &matmul(&xt, &dk, arith)?, arith);
        add_into(&mut grads.wv, &matmul(&xt, &dv, arith)?, arith);
        let dx_q = matmul_transposed(&dq, &model.wq, arith)?;
        let dx_k = matmul_transposed(&dk, &model.wk, arith)?;
        let dx_v = matmul_transposed(&dv, &model.wv, arith)?;
        let dx = zip_map(&zip_map(&dx_q, &dx_k, arith, |a, b| a + b), &dx_v, arith, |a, b| a + b);

        // scatter into embedding rows
        let mut embed = grads.embed.as_slice().to_vec();
        for (r, &t) in tr.tokens.iter().enumerate() {
            for c in 0..d {
                let slot = &mut embed[t * d + c];
                *slot = arith.add(*slot, dx.get(r, c));
            }
        }
        grads.embed = Matrix::from_quantized(model.embed.rows(), d, embed, fmt);
    }
    Ok(grads)
}

/// `w <- w - lr * g`, rounded at the parameter format.
pub fn sgd_step(model: &mut ToyModel, grads: &Gradients, lr: f64, arith: Arithmetic) {
    let lr = arith.round(lr);
    for ((_, w), (_, g)) in model.tensors_mut().into_iter().zip(grads.tensors()) {
        *w = zip_map(w, g, arith, |w, g| w - arith.mul(lr, g));
    }
}
