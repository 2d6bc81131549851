//! Built-in oracle suite run by `numdev validate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rustc_apfloat::ieee::{BFloat, Double, Half};
use rustc_apfloat::{Float, FloatConvert, Round};
use serde::Serialize;

use crate::attention::{attention_scores, baseline_attention, flash_attention_with_stats, BlockGeometry, Variant};
use crate::error::Result;
use crate::linalg::{random_matrix_with, InputDistribution, Matrix};
use crate::metrics::wasserstein_1d;
use crate::numerics::{quantize, Arithmetic, FloatFormat};
use crate::trainer::{backward, forward_loss, KernelChoice, TaskSpec, ToyModel};

pub const CHECKS: [&str; 4] = [
    "quantize-conformance",
    "single-tile-reduction",
    "wasserstein-oracle",
    "fp64-gradient-check",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<CheckResult>) -> Self {
        r.unwrap_or_else(|e| CheckResult::new(name, false, format!("error: {e}")))
    }
}

/// Doubles covering normal, subnormal, overflow and exact-tie inputs of the
/// 16- and 32-bit formats.
pub fn conformance_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            match i % 4 {
                // spread over the FP16 and BF16 dynamic range and beyond
                0 => sign * (rng.random_range(-30.0..18.0f64)).exp2(),
                // FP32 range, including its subnormals
                1 => sign * (rng.random_range(-155.0..130.0f64)).exp2(),
                // midpoint between adjacent FP16 values
                2 => {
                    let e = rng.random_range(-26i32..16);
                    let m = rng.random_range(0u64..1024) as f64;
                    sign * (1024.0 + m + 0.5) * (e as f64 - 10.0).exp2()
                }
                // midpoint between adjacent FP32 values
                _ => {
                    let e = rng.random_range(-150i32..128);
                    let m = rng.random_range(0u64..1 << 23) as f64;
                    sign * ((1u64 << 23) as f64 + m + 0.5) * (e as f64 - 23.0).exp2()
                }
            }
        })
        .collect()
}

/// Round-to-nearest-even conversion through a software IEEE implementation.
fn softfloat_round<T>(x: f64) -> f64
where
    T: Float + FloatConvert<Double>,
    Double: FloatConvert<T>,
{
    let mut lost = false;
    let narrow: T = Double::from_bits(x.to_bits() as u128)
        .convert_r(Round::NearestTiesToEven, &mut lost)
        .value;
    let wide: Double = narrow.convert(&mut lost).value;
    f64::from_bits(wide.to_bits() as u64)
}

/// Compares `quantizer` bit-for-bit with native FP32 conversion and software
/// IEEE FP16 and BF16 conversions.
pub fn check_quantize_conformance(
    quantizer: &dyn Fn(f64, FloatFormat) -> f64,
    samples: usize,
    seed: u64,
) -> CheckResult {
    let name = CHECKS[0];
    let xs = conformance_samples(samples, seed);
    type Oracle = fn(f64) -> f64;
    let oracles: [(FloatFormat, Oracle); 3] = [
        (FloatFormat::FP32, |x| x as f32 as f64),
        (FloatFormat::FP16, softfloat_round::<Half>),
        (FloatFormat::BF16, softfloat_round::<BFloat>),
    ];
    for (fmt, oracle) in oracles {
        let mismatches: Vec<f64> = xs
            .iter()
            .copied()
            .filter(|&x| quantizer(x, fmt).to_bits() != oracle(x).to_bits())
            .collect();
        if let Some(&x) = mismatches.first() {
            return CheckResult::new(
                name,
                false,
                format!(
                    "{fmt}: {} of {samples} mismatches, first x = {x:e}: got {:e}, expected {:e}",
                    mismatches.len(),
                    quantizer(x, fmt),
                    oracle(x)
                ),
            );
        }
    }
    CheckResult::new(name, true, format!("{samples} samples x {{fp32, fp16, bf16}} bit-exact"))
}

/// Single-tile flash against the baseline: row max and softmax denominator
/// identical in every format, outputs within 1e-12 at FP64.
pub fn check_single_tile(configs: usize, seed: u64) -> CheckResult {
    let name = CHECKS[1];
    CheckResult::from_result(name, (|| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut worst_fp64 = 0.0f64;
        for i in 0..configs {
            let n = rng.random_range(1..=24);
            let d = rng.random_range(1..=16);
            let s = seed.wrapping_add(i as u64);
            let dist = InputDistribution::StandardNormal;
            let geom = BlockGeometry::new(n + rng.random_range(0..4), n + rng.random_range(0..4))?
                .clamped(n);
            for fmt in FloatFormat::PRESETS {
                let arith = Arithmetic::per_op(fmt);
                let q = random_matrix_with(n, d, s, 0, dist, fmt)?;
                let k = random_matrix_with(n, d, s, 1, dist, fmt)?;
                let v = random_matrix_with(n, d, s, 2, dist, fmt)?;
                let flash = flash_attention_with_stats(&q, &k, &v, arith, geom)?;
                let scores = attention_scores(&q, &k, arith)?;
                for r in 0..n {
                    let row = scores.row(r);
                    let m = row.iter().fold(f64::NEG_INFINITY, |a, &x| arith.max(a, x));
                    let p: Vec<f64> = row.iter().map(|&x| arith.exp(arith.sub(x, m))).collect();
                    let l = arith.sum(&p);
                    if flash.row_max[r] != m || flash.row_denom[r] != l {
                        return Ok(CheckResult::new(
                            name,
                            false,
                            format!(
                                "{fmt}, N={n}, d={d}, row {r}: (m, l) = ({}, {}) vs baseline ({m}, {l})",
                                flash.row_max[r], flash.row_denom[r]
                            ),
                        ));
                    }
                }
                if fmt == FloatFormat::FP64 {
                    let base = baseline_attention(&q, &k, &v, arith)?;
                    worst_fp64 = worst_fp64.max(max_gap(&flash.output, &base));
                }
            }
        }
        let passed = worst_fp64 <= 1e-12;
        Ok(CheckResult::new(
            name,
            passed,
            format!("{configs} configs; intermediates exact; FP64 max diff {worst_fp64:e}"),
        ))
    })())
}

fn max_gap(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Optimal-assignment Wasserstein-1 by enumerating every permutation.
pub fn brute_force_w1(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "brute force needs equal sizes");
    let n = xs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| (xs[i] - ys[j]).abs()).sum::<f64>();
    best = best.min(cost(&perm));
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

pub fn check_wasserstein_oracle(trials: usize, seed: u64) -> CheckResult {
    let name = CHECKS[2];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..=8);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let got = match wasserstein_1d(&xs, &ys) {
            Ok(w) => w,
            Err(e) => return CheckResult::new(name, false, format!("error: {e}")),
        };
        worst = worst.max((got - brute_force_w1(&xs, &ys)).abs());
    }
    CheckResult::new(
        name,
        worst <= 1e-12,
        format!("{trials} trials, max |sorted - brute force| = {worst:e}"),
    )
}

fn perturbed(model: &ToyModel, tensor: usize, idx: usize, delta: f64) -> Result<ToyModel> {
    let tensors = model
        .tensors()
        .iter()
        .enumerate()
        .map(|(t, (name, m))| {
            let mut data = m.as_slice().to_vec();
            if t == tensor {
                data[idx] += delta;
            }
            Ok((name.to_string(), Matrix::from_vec(m.rows(), m.cols(), data, m.format())?))
        })
        .collect::<Result<Vec<_>>>()?;
    ToyModel::from_tensors(tensors)
}

/// Largest relative gap between analytic and central-difference gradients of
/// a randomized `d = 8` toy model at FP64, for both attention variants.
pub fn gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let task = TaskSpec {
        vocab: rng.random_range(8..=16),
        seq_len: rng.random_range(3..=8),
        head_dim: 8,
        classes: rng.random_range(2..=4),
        examples: 8,
        batch_size: 8,
        data_seed: rng.random(),
        ..TaskSpec::default()
    };
    let data = task.dataset();
    let model = ToyModel::init(&task, rng.random(), rng.random_range(0.3..1.0), FloatFormat::FP64)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for variant in [Variant::Baseline, Variant::Flash] {
        let kernel = KernelChoice {
            variant,
            geometry: BlockGeometry::new(2, 3)?,
            arith: Arithmetic::per_op(FloatFormat::FP64),
        };
        let (_, acts) = forward_loss(&model, &data, kernel)?;
        let grads = backward(&model, &acts, kernel.arith)?;
        for (t, (_, g)) in grads.tensors().iter().enumerate() {
            for (idx, &analytic) in g.as_slice().iter().enumerate() {
                let up = forward_loss(&perturbed(&model, t, idx, h)?, &data, kernel)?.0;
                let down = forward_loss(&perturbed(&model, t, idx, -h)?, &data, kernel)?.0;
                let numeric = (up - down) / (2.0 * h);
                let scale = numeric.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max((numeric - analytic).abs() / scale);
            }
        }
    }
    Ok(worst)
}

pub fn check_gradients(models: usize, seed: u64) -> CheckResult {
    let name = CHECKS[3];
    CheckResult::from_result(name, (|| {
        let mut worst = 0.0f64;
        for i in 0..models {
            worst = worst.max(gradient_error(seed.wrapping_add(i as u64))?);
        }
        Ok(CheckResult::new(
            name,
            worst <= 1e-4,
            format!("{models} models, max relative error {worst:e}"),
        ))
    })())
}

/// Runs every check with the built-in quantizer.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_quantize_conformance(&quantize, 1_000_000, 0x5eed),
        check_single_tile(100, 0x5eed),
        check_wasserstein_oracle(500, 0x5eed),
        check_gradients(3, 0x5eed),
    ]
}
