//! Baseline and tiled (flash) attention over emulated arithmetic.
//!
//! Both kernels compute `softmax(Q K^T / sqrt(d)) V` for `N x d` inputs. The
//! baseline materializes the full `N x N` score matrix; the flash kernel walks
//! `Br x Bc` tiles and keeps a running `(max, denominator, output)` triple per
//! query row, rescaling it whenever a new tile raises the running max.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_transposed, softmax_rows, Matrix, PARALLEL_MIN_WORK};
use crate::numerics::{Arithmetic, FloatFormat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Baseline,
    Flash,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Flash => "flash",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tile shape: `block_rows` query rows by `block_cols` key/value rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockGeometry {
    pub block_rows: usize,
    pub block_cols: usize,
}

impl BlockGeometry {
    pub fn new(block_rows: usize, block_cols: usize) -> Result<Self> {
        if block_rows == 0 || block_cols == 0 {
            return Err(Error::invalid(format!(
                "block dimensions must be >= 1, got ({block_rows}, {block_cols})"
            )));
        }
        Ok(BlockGeometry {
            block_rows,
            block_cols,
        })
    }

    pub fn area(self) -> usize {
        self.block_rows * self.block_cols
    }

    /// Clamps both dimensions into `[1, n]`.
    pub fn clamped(self, n: usize) -> BlockGeometry {
        BlockGeometry {
            block_rows: self.block_rows.clamp(1, n.max(1)),
            block_cols: self.block_cols.clamp(1, n.max(1)),
        }
    }

    /// True when a whole `n x n` score matrix fits in one tile.
    pub fn is_single_tile(self, n: usize) -> bool {
        self.block_rows >= n && self.block_cols >= n
    }
}

/// `Bc = ceil(M / 4d)`, `Br = min(ceil(M / 4d), d)` for an on-chip budget of
/// `sram_elems` elements.
pub fn default_block_geometry(sram_elems: usize, head_dim: usize) -> Result<BlockGeometry> {
    if head_dim == 0 {
        return Err(Error::invalid("head_dim must be >= 1"));
    }
    if sram_elems < 4 * head_dim {
        return Err(Error::invalid(format!(
            "sram_elems ({sram_elems}) must be at least 4 * head_dim ({})",
            4 * head_dim
        )));
    }
    let bc = sram_elems.div_ceil(4 * head_dim);
    BlockGeometry::new(bc.min(head_dim), bc)
}

/// Block-shape perturbations applied before running the flash kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Exchange the `Br` and `Bc` values; loop nesting stays rows-outer.
    SwapDims,
    /// Square tile with the same area, side `round(sqrt(Br * Bc))`.
    SquareOfEqualArea,
    /// Scale the area by `factor`, each side by `sqrt(factor)`.
    ScaleArea(f64),
}

pub fn perturb_geometry(geom: BlockGeometry, kind: Perturbation) -> BlockGeometry {
    let round_side = |x: f64| (x.round() as usize).max(1);
    match kind {
        Perturbation::SwapDims => BlockGeometry {
            block_rows: geom.block_cols,
            block_cols: geom.block_rows,
        },
        Perturbation::SquareOfEqualArea => {
            let side = round_side((geom.area() as f64).sqrt());
            BlockGeometry {
                block_rows: side,
                block_cols: side,
            }
        }
        Perturbation::ScaleArea(factor) => {
            let s = factor.sqrt();
            BlockGeometry {
                block_rows: round_side(geom.block_rows as f64 * s),
                block_cols: round_side(geom.block_cols as f64 * s),
            }
        }
    }
}

/// Everything needed to run one attention kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub seq_len: usize,
    pub head_dim: usize,
    pub format: FloatFormat,
    pub variant: Variant,
    pub block_rows: usize,
    pub block_cols: usize,
    /// When set, overrides `block_rows`/`block_cols` via [`default_block_geometry`].
    pub sram_elems: Option<usize>,
    pub accumulate_in_carrier: bool,
}

impl Default for AttentionConfig {
    /// `N = 512`, `d = 64`, BF16 baseline with a 16384-element tile budget.
    fn default() -> Self {
        AttentionConfig {
            seq_len: 512,
            head_dim: 64,
            format: FloatFormat::BF16,
            variant: Variant::Baseline,
            block_rows: 64,
            block_cols: 64,
            sram_elems: Some(16384),
            accumulate_in_carrier: false,
        }
    }
}

impl AttentionConfig {
    /// Query/key scale `1/sqrt(d)`; always derived from `head_dim`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }

    pub fn arithmetic(&self) -> Arithmetic {
        Arithmetic {
            format: self.format,
            accumulate_in_carrier: self.accumulate_in_carrier,
        }
    }

    /// The tile shape this config resolves to, before clamping.
    pub fn geometry(&self) -> Result<BlockGeometry> {
        match self.sram_elems {
            Some(m) => default_block_geometry(m, self.head_dim),
            None => BlockGeometry::new(self.block_rows, self.block_cols),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.head_dim == 0 {
            return Err(Error::invalid("seq_len and head_dim must be >= 1"));
        }
        if self.variant == Variant::Flash {
            let g = self.geometry()?;
            if g.block_rows > self.seq_len || g.block_cols > self.seq_len {
                return Err(Error::invalid(format!(
                    "block ({}, {}) exceeds seq_len {}",
                    g.block_rows, g.block_cols, self.seq_len
                )));
            }
        }
        Ok(())
    }

    /// Runs the configured kernel on `N x d` inputs.
    pub fn run(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        self.validate()?;
        let arith = self.arithmetic();
        match self.variant {
            Variant::Baseline => baseline_attention(q, k, v, arith),
            Variant::Flash => flash_attention(q, k, v, arith, self.geometry()?),
        }
    }
}

fn check_inputs(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.rows() == 0 || q.cols() == 0 {
        return Err(Error::invalid("attention inputs must be non-empty"));
    }
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::invalid(format!(
            "Q, K, V must share one N x d shape, got {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok(())
}

/// The rounded `1/sqrt(d)` both kernels multiply scores by.
fn score_scale(head_dim: usize, arith: Arithmetic) -> f64 {
    arith.round(1.0 / (head_dim as f64).sqrt())
}

/// Unfused attention: `S = (Q K^T) * scale`, `A = softmax_rows(S)`, `O = A V`.
pub fn baseline_attention(q: &Matrix, k: &Matrix, v: &Matrix, arith: Arithmetic) -> Result<Matrix> {
    check_inputs(q, k, v)?;
    let scores = attention_scores(q, k, arith)?;
    let probs = softmax_rows(&scores, arith)?;
    matmul(&probs, v, arith)
}

/// The scaled score matrix `(Q K^T) * 1/sqrt(d)`, scaling applied after the product.
pub fn attention_scores(q: &Matrix, k: &Matrix, arith: Arithmetic) -> Result<Matrix> {
    let scale = score_scale(q.cols(), arith);
    let raw = matmul_transposed(q, k, arith)?;
    Ok(raw.map(arith, |s| s * scale))
}

/// Tiled attention with online softmax, column blocks in ascending order.
pub fn flash_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    arith: Arithmetic,
    geom: BlockGeometry,
) -> Result<Matrix> {
    let n_col_blocks = q.rows().div_ceil(geom.block_cols.max(1));
    let order: Vec<usize> = (0..n_col_blocks).collect();
    flash_attention_ordered(q, k, v, arith, geom, &order)
}

/// Tiled attention visiting column blocks in `order`, which must be a
/// permutation of `0..ceil(N / Bc)`.
pub fn flash_attention_ordered(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    arith: Arithmetic,
    geom: BlockGeometry,
    order: &[usize],
) -> Result<Matrix> {
    Ok(flash_inner(q, k, v, arith, geom, order)?.output)
}

/// Flash output together with each query row's final running max and denominator.
#[derive(Clone, Debug, PartialEq)]
pub struct FlashOutput {
    pub output: Matrix,
    pub row_max: Vec<f64>,
    pub row_denom: Vec<f64>,
}

pub fn flash_attention_with_stats(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    arith: Arithmetic,
    geom: BlockGeometry,
) -> Result<FlashOutput> {
    let order: Vec<usize> = (0..q.rows().div_ceil(geom.block_cols.max(1))).collect();
    flash_inner(q, k, v, arith, geom, &order)
}

fn flash_inner(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    arith: Arithmetic,
    geom: BlockGeometry,
    order: &[usize],
) -> Result<FlashOutput> {
    check_inputs(q, k, v)?;
    let geom = BlockGeometry::new(geom.block_rows, geom.block_cols)?;
    let (n, d) = q.shape();
    if geom.block_rows > n || geom.block_cols > n {
        return Err(Error::invalid(format!(
            "block ({}, {}) exceeds seq_len {n}",
            geom.block_rows, geom.block_cols
        )));
    }
    let n_col_blocks = n.div_ceil(geom.block_cols);
    let mut seen = vec![false; n_col_blocks];
    for &j in order {
        if j >= n_col_blocks || std::mem::replace(&mut seen[j], true) {
            return Err(Error::invalid("column block order is not a permutation"));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("column block order is not a permutation"));
    }

    let scale = score_scale(d, arith);
    let vt = v.transpose();
    let run_row_block = |bi: usize| {
        let row0 = bi * geom.block_rows;
        let br = geom.block_rows.min(n - row0);
        let mut tile = RowBlockState::new(br, d);
        for &bj in order {
            let col0 = bj * geom.block_cols;
            let bc = geom.block_cols.min(n - col0);
            tile.absorb(q, k, &vt, row0, col0, bc, scale, arith);
        }
        tile
    };
    let n_row_blocks = n.div_ceil(geom.block_rows);
    let blocks: Vec<RowBlockState> = if n * n * d < PARALLEL_MIN_WORK {
        (0..n_row_blocks).map(run_row_block).collect()
    } else {
        (0..n_row_blocks).into_par_iter().map(run_row_block).collect()
    };
    let mut out = Vec::with_capacity(n * d);
    let mut row_max = Vec::with_capacity(n);
    let mut row_denom = Vec::with_capacity(n);
    for b in blocks {
        out.extend_from_slice(&b.output);
        row_max.extend_from_slice(&b.max);
        row_denom.extend_from_slice(&b.denom);
    }
    Ok(FlashOutput {
        output: Matrix::from_quantized(n, d, out, arith.format),
        row_max,
        row_denom,
    })
}

/// Running statistics for one block of query rows.
struct RowBlockState {
    d: usize,
    /// running row max, starts at -inf
    max: Vec<f64>,
    /// running softmax denominator
    denom: Vec<f64>,
    /// running normalized output, `rows x d`
    output: Vec<f64>,
    scores: Vec<f64>,
}

impl RowBlockState {
    fn new(rows: usize, d: usize) -> Self {
        RowBlockState {
            d,
            max: vec![f64::NEG_INFINITY; rows],
            denom: vec![0.0; rows],
            output: vec![0.0; rows * d],
            scores: Vec::new(),
        }
    }

    /// Folds key/value rows `col0..col0 + bc` into every query row of the block.
    #[allow(clippy::too_many_arguments)]
    fn absorb(
        &mut self,
        q: &Matrix,
        k: &Matrix,
        vt: &Matrix,
        row0: usize,
        col0: usize,
        bc: usize,
        scale: f64,
        arith: Arithmetic,
    ) {
        let d = self.d;
        let n = vt.cols();
        self.scores.resize(bc, 0.0);
        for r in 0..self.max.len() {
            let q_row = q.row(row0 + r);
            // S = scale * (Q_i K_j^T), tile max
            let mut tile_max = f64::NEG_INFINITY;
            for (c, s) in self.scores.iter_mut().enumerate() {
                *s = arith.mul(arith.dot(q_row, k.row(col0 + c)), scale);
                tile_max = arith.max(tile_max, *s);
            }
            // P = exp(S - m~), l~ = rowsum(P)
            for s in self.scores.iter_mut() {
                *s = arith.exp(arith.sub(*s, tile_max));
            }
            let tile_denom = arith.sum(&self.scores);

            let new_max = arith.max(self.max[r], tile_max);
            let old_factor = arith.exp(arith.sub(self.max[r], new_max));
            let tile_factor = arith.exp(arith.sub(tile_max, new_max));
            let carried = arith.mul(old_factor, self.denom[r]);
            let new_denom = arith.add(carried, arith.mul(tile_factor, tile_denom));
            let out_coef = arith.div(carried, new_denom);
            let pv_coef = arith.div(tile_factor, new_denom);

            let o_row = &mut self.output[r * d..(r + 1) * d];
            for (c, o) in o_row.iter_mut().enumerate() {
                let pv = arith.dot(&self.scores, &vt.row(c)[col0..col0 + bc]);
                *o = arith.add(arith.mul(out_coef, *o), arith.mul(pv_coef, pv));
            }
            debug_assert_eq!(vt.rows(), d);
            debug_assert!(col0 + bc <= n);
            self.max[r] = new_max;
            self.denom[r] = new_denom;
        }
    }
}
