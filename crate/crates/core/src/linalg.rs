//! Dense row-major matrices over emulated formats.
//!
//! Every product accumulates left-to-right in index order, so results are
//! bit-reproducible. Parallelism is only ever across independent output rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{quantize, Arithmetic, FloatFormat};

/// Below this many inner-loop steps, row-parallel dispatch costs more than it saves.
pub(crate) const PARALLEL_MIN_WORK: usize = 1 << 15;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    format: FloatFormat,
}

impl Matrix {
    /// Builds a matrix from raw carrier values, quantizing each to `format`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>, format: FloatFormat) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        let data = if format.is_carrier() {
            data
        } else {
            data.into_iter().map(|x| quantize(x, format)).collect()
        };
        Ok(Matrix {
            rows,
            cols,
            data,
            format,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], format: FloatFormat) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat(), format)
    }

    pub fn zeros(rows: usize, cols: usize, format: FloatFormat) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            format,
        }
    }

    pub fn identity(n: usize, format: FloatFormat) -> Self {
        let mut m = Matrix::zeros(n, n, format);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Wraps values the caller has already rounded to `format`.
    pub(crate) fn from_quantized(rows: usize, cols: usize, data: Vec<f64>, format: FloatFormat) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix {
            rows,
            cols,
            data,
            format,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn format(&self) -> FloatFormat {
        self.format
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Matrix {
        Matrix::from_quantized(
            len,
            self.cols,
            self.data[start * self.cols..(start + len) * self.cols].to_vec(),
            self.format,
        )
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.data[r * self.cols + c]);
            }
        }
        Matrix::from_quantized(self.cols, self.rows, data, self.format)
    }

    /// Re-rounds every element into `format`.
    pub fn to_format(&self, format: FloatFormat) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.clone(), format)
            .expect("shape unchanged")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise map, rounding the results with `arith`.
    pub fn map(&self, arith: Arithmetic, f: impl Fn(f64) -> f64) -> Matrix {
        let data = self.data.iter().map(|&x| arith.round(f(x))).collect();
        Matrix::from_quantized(self.rows, self.cols, data, arith.format)
    }
}

/// Distribution for random matrix entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDistribution {
    #[default]
    StandardNormal,
    /// Uniform on (-1, 1).
    Uniform,
}

/// Deterministic sampler: ChaCha20 keyed by the seed, one stream per matrix.
///
/// Samples are drawn in row-major order, so the same `(seed, stream, shape)`
/// yields bit-identical carrier values on every platform.
pub fn carrier_draw(
    rows: usize,
    cols: usize,
    seed: u64,
    stream: u64,
    dist: InputDistribution,
) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "matrix dimensions must be >= 1, got {rows}x{cols}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = rows * cols;
    Ok(match dist {
        InputDistribution::StandardNormal => {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        }
        InputDistribution::Uniform => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    })
}

/// `rows x cols` i.i.d. standard normal entries, quantized to `fmt`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64, fmt: FloatFormat) -> Result<Matrix> {
    random_matrix_with(rows, cols, seed, 0, InputDistribution::StandardNormal, fmt)
}

pub fn random_matrix_with(
    rows: usize,
    cols: usize,
    seed: u64,
    stream: u64,
    dist: InputDistribution,
    fmt: FloatFormat,
) -> Result<Matrix> {
    let data = carrier_draw(rows, cols, seed, stream, dist)?;
    Matrix::from_vec(rows, cols, data, fmt)
}

/// `A * B` with every step rounded under `arith`.
pub fn matmul(a: &Matrix, b: &Matrix, arith: Arithmetic) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::invalid(format!(
            "matmul shape mismatch: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    matmul_transposed(a, &b.transpose(), arith)
}

/// `A * B^T` without forming the transpose.
pub fn matmul_transposed(a: &Matrix, bt: &Matrix, arith: Arithmetic) -> Result<Matrix> {
    if a.cols != bt.cols {
        return Err(Error::invalid(format!(
            "matmul shape mismatch: {}x{} * ({}x{})^T",
            a.rows, a.cols, bt.rows, bt.cols
        )));
    }
    let n = bt.rows;
    let mut out = vec![0.0; a.rows * n];
    let fill_row = |(i, out_row): (usize, &mut [f64])| {
        let lhs = a.row(i);
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = arith.dot(lhs, bt.row(j));
        }
    };
    if n > 0 {
        if a.rows * n * a.cols < PARALLEL_MIN_WORK {
            out.chunks_mut(n).enumerate().for_each(fill_row);
        } else {
            out.par_chunks_mut(n).enumerate().for_each(fill_row);
        }
    }
    Ok(Matrix::from_quantized(a.rows, n, out, arith.format))
}

/// Numerically stable row softmax: subtract the row max, exponentiate, sum
/// left-to-right, divide. Each step is rounded under `arith`.
pub fn softmax_rows(a: &Matrix, arith: Arithmetic) -> Result<Matrix> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::invalid("softmax of an empty matrix"));
    }
    let mut out = vec![0.0; a.data.len()];
    let fill_row = |(i, out_row): (usize, &mut [f64])| softmax_row_into(a.row(i), out_row, arith);
    if a.data.len() < PARALLEL_MIN_WORK {
        out.chunks_mut(a.cols).enumerate().for_each(fill_row);
    } else {
        out.par_chunks_mut(a.cols).enumerate().for_each(fill_row);
    }
    Ok(Matrix::from_quantized(a.rows, a.cols, out, arith.format))
}

pub(crate) fn softmax_row_into(row: &[f64], out: &mut [f64], arith: Arithmetic) {
    let m = row.iter().fold(f64::NEG_INFINITY, |acc, &x| arith.max(acc, x));
    for (o, &x) in out.iter_mut().zip(row) {
        *o = arith.exp(arith.sub(x, m));
    }
    let l = arith.sum(out);
    for o in out.iter_mut() {
        *o = arith.div(*o, l);
    }
}
