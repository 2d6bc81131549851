use numdev::numerics::{quantize, ulp, FloatFormat};
use numdev::validate::check_quantize_conformance;
use proptest::prelude::*;

fn format() -> impl Strategy<Value = FloatFormat> {
    (2u32..=11, 1u32..=52).prop_map(|(e, m)| FloatFormat::new(e, m).unwrap())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        -1e6..1e6f64,
        -1e-3..1e-3f64,
    ]
}

/// A value in the normal range of a random format.
fn normal_value() -> impl Strategy<Value = (f64, FloatFormat)> {
    format().prop_flat_map(|fmt| {
        let exps = fmt.min_exponent()..=fmt.max_exponent();
        (exps, 1.0..2.0f64, any::<bool>()).prop_map(move |(e, frac, neg)| {
            let x = (frac * 2f64.powi(e)).min(fmt.max_finite());
            (if neg { -x } else { x }, fmt)
        })
    })
}

#[test]
fn million_samples_match_native_and_softfloat() {
    let r = check_quantize_conformance(&quantize, 1_000_000, 2024);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn specials() {
    for fmt in FloatFormat::PRESETS {
        assert!(quantize(f64::NAN, fmt).is_nan());
        assert_eq!(quantize(f64::INFINITY, fmt), f64::INFINITY);
        assert_eq!(quantize(-0.0, fmt).to_bits(), (-0.0f64).to_bits());
        assert_eq!(quantize(fmt.max_finite(), fmt), fmt.max_finite());
        assert_eq!(quantize(fmt.min_positive_subnormal(), fmt), fmt.min_positive_subnormal());
        assert_eq!(quantize(fmt.min_positive_subnormal() / 2.0, fmt), 0.0);
    }
    assert_eq!(quantize(65520.0, FloatFormat::FP16), f64::INFINITY);
    assert_eq!(quantize(65519.0, FloatFormat::FP16), 65504.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn fp32_matches_native_cast(x in any::<f64>().prop_filter("not NaN", |x| !x.is_nan())) {
        prop_assert_eq!(quantize(x, FloatFormat::FP32).to_bits(), (x as f32 as f64).to_bits());
    }

    #[test]
    fn idempotent(x in finite(), fmt in format()) {
        let q = quantize(x, fmt);
        prop_assert_eq!(quantize(q, fmt).to_bits(), q.to_bits());
    }

    #[test]
    fn monotone(a in finite(), b in finite(), fmt in format()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, fmt) <= quantize(hi, fmt));
    }

    #[test]
    fn relative_error_bounded_in_normal_range((x, fmt) in normal_value()) {
        let q = quantize(x, fmt);
        prop_assert!((q - x).abs() <= fmt.unit_roundoff() * x.abs());
    }

    #[test]
    fn within_half_ulp(x in -1e4..1e4f64, fmt in format()) {
        let q = quantize(x, fmt);
        prop_assume!(q.is_finite());
        prop_assert!((q - x).abs() <= ulp(q, fmt) / 2.0);
    }

    #[test]
    fn odd_symmetry(x in finite(), fmt in format()) {
        prop_assert_eq!(quantize(-x, fmt).to_bits(), (-quantize(x, fmt)).to_bits());
    }
}
