//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line to stderr (uncaptured) and then asserts it.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use numdev::attention::{baseline_attention, flash_attention, BlockGeometry, Perturbation, Variant};
use numdev::linalg::{random_matrix_with, InputDistribution};
use numdev::metrics::median;
use numdev::report::{sweep_csv_string, training_csv_string, training_summary};
use numdev::sweeps::{run_sweep, AxisValue, Reference, SweepResult};
use numdev::trainer::{run_scenario_suite, Scenario, ScenarioSuite};
use numdev::validate;
use numdev::{quantize, ulp, wasserstein_1d, Arithmetic, FloatFormat, SweepSpec, TrainRunConfig};

/// One criterion at a time, so the time budgets measure that criterion alone.
static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: u32, passed: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let within = elapsed <= budget;
    let status = if passed && within { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n}: {status} ({:.1} s of {} s) {detail}",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(passed, "criterion {n}: {detail}");
    assert!(within, "criterion {n}: took {elapsed:?}, budget {budget:?}");
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn flash_golden(result: &SweepResult, value: AxisValue, fmt: FloatFormat, variant: Variant) -> f64 {
    result
        .point(value, variant, fmt, Reference::Golden)
        .expect("point present")
        .max_abs_diff
        .median
}

#[test]
fn criterion_1_quantize_conformance() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let conformance = validate::check_quantize_conformance(&quantize, 1_000_000, 1);
    let samples = validate::conformance_samples(200_000, 2);
    let formats = [
        FloatFormat::BF16,
        FloatFormat::FP16,
        FloatFormat::FP32,
        FloatFormat::new(4, 3).unwrap(),
        FloatFormat::new(5, 2).unwrap(),
        FloatFormat::new(11, 20).unwrap(),
    ];
    let mut idempotent = true;
    let mut monotone = true;
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    for fmt in formats {
        idempotent &= samples.iter().all(|&x| {
            let q = quantize(x, fmt);
            quantize(q, fmt).to_bits() == q.to_bits()
        });
        monotone &= sorted
            .windows(2)
            .all(|w| quantize(w[0], fmt) <= quantize(w[1], fmt));
    }
    let passed = conformance.passed && idempotent && monotone;
    let detail = format!(
        "{}; idempotent {idempotent}, monotone {monotone} over {} formats",
        conformance.detail,
        formats.len()
    );
    report(1, passed, start.elapsed(), secs(10), &detail);
}

#[test]
fn criterion_2_single_tile_reduction() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst_ulps = [0.0f64; 4];
    let mut worst_fp64 = 0.0f64;
    for i in 0..100u64 {
        let n = rng.random_range(1..=64);
        let d = rng.random_range(1..=64);
        let geom = BlockGeometry::new(n + rng.random_range(0..8), n + rng.random_range(0..8))
            .unwrap()
            .clamped(n);
        for (slot, fmt) in FloatFormat::PRESETS.into_iter().enumerate() {
            let arith = Arithmetic::per_op(fmt);
            let draw = |stream| {
                random_matrix_with(n, d, i, stream, InputDistribution::StandardNormal, fmt).unwrap()
            };
            let (q, k, v) = (draw(0), draw(1), draw(2));
            let flash = flash_attention(&q, &k, &v, arith, geom).unwrap();
            let base = baseline_attention(&q, &k, &v, arith).unwrap();
            for (&f, &b) in flash.as_slice().iter().zip(base.as_slice()) {
                let gap = (f - b).abs();
                worst_ulps[slot] = worst_ulps[slot].max(gap / ulp(b, fmt));
                if fmt == FloatFormat::FP64 {
                    worst_fp64 = worst_fp64.max(gap);
                }
            }
        }
    }
    let passed = worst_ulps.iter().all(|&u| u <= 2.0) && worst_fp64 <= 1e-12;
    let detail = format!(
        "worst ulps bf16 {:.2} fp16 {:.2} fp32 {:.2} fp64 {:.2}; fp64 max diff {worst_fp64:e}",
        worst_ulps[0], worst_ulps[1], worst_ulps[2], worst_ulps[3]
    );
    report(2, passed, start.elapsed(), secs(30), &detail);
}

#[test]
fn criterion_3_precision_trend() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let result = run_sweep(&SweepSpec::precision_default()).unwrap();
    let flash: Vec<f64> = [FloatFormat::BF16, FloatFormat::FP16, FloatFormat::FP32]
        .iter()
        .map(|&f| flash_golden(&result, AxisValue::Format(f), f, Variant::Flash))
        .collect();
    let bf16 = AxisValue::Format(FloatFormat::BF16);
    let baseline = flash_golden(&result, bf16, FloatFormat::BF16, Variant::Baseline);
    let ratio = flash[0] / baseline;
    let decreasing = flash.windows(2).all(|w| w[0] > w[1]);
    let in_band = (2.0..=50.0).contains(&ratio);
    let detail = format!(
        "flash-vs-golden medians bf16 {:.3e} fp16 {:.3e} fp32 {:.3e} (decreasing {decreasing}); \
         bf16 flash:baseline {ratio:.3} (in [2, 50] {in_band})",
        flash[0], flash[1], flash[2]
    );
    report(3, decreasing && in_band, start.elapsed(), secs(120), &detail);
}

#[test]
fn criterion_4_seqlen_trend() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let spec = SweepSpec::seqlen_default();
    let result = run_sweep(&spec).unwrap();
    let points: Vec<_> = spec
        .values
        .iter()
        .map(|&v| {
            result
                .point(v, Variant::Flash, FloatFormat::BF16, Reference::Paired)
                .expect("point present")
        })
        .collect();
    let max: Vec<f64> = points.iter().map(|p| p.max_abs_diff.median).collect();
    let std: Vec<f64> = points.iter().map(|p| p.std_diff.median).collect();
    let nondecreasing = |xs: &[f64]| xs.windows(2).all(|w| w[0] <= w[1]);
    let passed = nondecreasing(&max) && nondecreasing(&std);
    let detail = format!("median max diff {}; median std {}", sci(&max), sci(&std));
    report(4, passed, start.elapsed(), secs(120), &detail);
}

#[test]
fn criterion_5_block_trends() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let bf16 = FloatFormat::BF16;
    let run = |perturbation| {
        let spec = SweepSpec {
            formats: vec![bf16],
            perturbation,
            ..SweepSpec::block_default()
        };
        let result = run_sweep(&spec).unwrap();
        spec.values
            .iter()
            .map(|&v| {
                result
                    .point(v, Variant::Flash, bf16, Reference::Golden)
                    .expect("point present")
                    .max_abs_diff
            })
            .collect::<Vec<_>>()
    };
    let plain = run(None);
    let swapped = run(Some(Perturbation::SwapDims));
    let square = run(Some(Perturbation::SquareOfEqualArea));
    let medians = |q: &[numdev::sweeps::Quartiles]| q.iter().map(|x| x.median).collect::<Vec<_>>();
    let (p, s, sq) = (medians(&plain), medians(&swapped), medians(&square));
    let nonincreasing = p.windows(2).all(|w| w[0] >= w[1]);
    let swap_worse = s.iter().zip(&p).all(|(s, p)| s >= p);
    let square_close = sq
        .iter()
        .zip(&plain)
        .all(|(sq, q)| (sq - q.median).abs() < q.iqr());
    let detail = format!(
        "medians unperturbed {} (non-increasing {nonincreasing}); swap {} (>= {swap_worse}); \
         square {} (within IQR {square_close})",
        sci(&p),
        sci(&s),
        sci(&sq)
    );
    report(5, nonincreasing && swap_worse && square_close, start.elapsed(), secs(180), &detail);
}

#[test]
fn criterion_6_wasserstein_oracle() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let oracle = validate::check_wasserstein_oracle(2000, 6);
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut axioms = true;
    for _ in 0..2000 {
        let n = rng.random_range(1..=32);
        let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-10.0..10.0)).collect() };
        let (x, y, z) = (draw(), draw(), draw());
        let w = |a: &[f64], b: &[f64]| wasserstein_1d(a, b).unwrap();
        let (xy, yx, yz, xz) = (w(&x, &y), w(&y, &x), w(&y, &z), w(&x, &z));
        axioms &= w(&x, &x) == 0.0 && xy >= 0.0 && (xy - yx).abs() <= 1e-12 && xz <= xy + yz + 1e-12;
    }
    let passed = oracle.passed && axioms;
    let detail = format!("{}; identity, symmetry, triangle over 2000 triples {axioms}", oracle.detail);
    report(6, passed, start.elapsed(), secs(10), &detail);
}

#[test]
fn criterion_7_gradient_check() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let result = validate::check_gradients(8, 7);
    report(7, result.passed, start.elapsed(), secs(30), &result.detail);
}

fn final_median(suites: &[ScenarioSuite], s: Scenario) -> f64 {
    let finals: Vec<f64> = suites
        .iter()
        .map(|x| x.get(s).last().expect("checkpoints").wasserstein)
        .collect();
    median(&finals)
}

#[test]
fn criterion_8_training_divergence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let suites: Vec<ScenarioSuite> = (0..5)
        .map(|seed| run_scenario_suite(&TrainRunConfig { seed, ..TrainRunConfig::default() }).unwrap())
        .collect();
    let summary = training_summary(&suites, "", "");
    let fb_curve = &summary.scenarios[0].median_wasserstein;
    let zero_start = suites
        .iter()
        .all(|s| s.get(Scenario::FlashVsBaseline)[0].wasserstein == 0.0);
    let first_nonzero = fb_curve.iter().copied().find(|&w| w > 0.0);
    let last = *fb_curve.last().unwrap();
    let rises = first_nonzero.is_some_and(|w| last > w);
    let fb = final_median(&suites, Scenario::FlashVsBaseline);
    let init = final_median(&suites, Scenario::DifferentInit);
    let prec = final_median(&suites, Scenario::Fp16VsFp32);
    let ordered = fb <= init && init <= prec;
    let ratio = prec / fb;
    let detail = format!(
        "(a) zero at step 0 {zero_start}, median rises {:.3e} -> {last:.3e} {rises}; \
         (b) finals flash-vs-baseline {fb:.3e}, different-init {init:.3e}, fp16-vs-fp32 {prec:.3e} ordered {ordered}; \
         (c) fp16-vs-fp32 / flash-vs-baseline {ratio:.2} (>= 1.5 {})",
        first_nonzero.unwrap_or(f64::NAN),
        ratio >= 1.5
    );
    let passed = zero_start && rises && ordered && ratio >= 1.5;
    report(8, passed, start.elapsed(), secs(600), &detail);
}

fn experiment_csvs() -> Vec<String> {
    let mut out: Vec<String> = [
        SweepSpec {
            seeds: vec![0],
            ..SweepSpec::precision_default()
        },
        SweepSpec {
            seeds: vec![0, 1],
            ..SweepSpec::seqlen_default()
        },
        SweepSpec {
            seeds: vec![0],
            formats: vec![FloatFormat::BF16],
            perturbation: Some(Perturbation::SwapDims),
            ..SweepSpec::block_default()
        },
    ]
    .iter()
    .map(|spec| sweep_csv_string(&run_sweep(spec).unwrap(), "h"))
    .collect();
    let train = TrainRunConfig {
        steps: 100,
        checkpoint_every: 25,
        ..TrainRunConfig::default()
    };
    out.push(training_csv_string(&run_scenario_suite(&train).unwrap().series, "h"));
    out
}

#[test]
fn criterion_9_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let first = pool(1).install(experiment_csvs);
    let again = pool(1).install(experiment_csvs);
    let threaded = pool(4).install(experiment_csvs);
    let rerun = first == again;
    let across_threads = first == threaded;
    let bytes: usize = first.iter().map(String::len).sum();
    let detail = format!(
        "{} experiments, {bytes} CSV bytes; rerun identical {rerun}, 1 vs 4 threads identical {across_threads}",
        first.len()
    );
    report(9, rerun && across_threads, start.elapsed(), secs(60), &detail);
}
