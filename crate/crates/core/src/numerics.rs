//! Software emulation of reduced-precision binary floating-point formats.
//!
//! Values are carried as `f64`. A [`FloatFormat`] describes a narrower IEEE-style
//! format (exponent width, explicit fraction width) and [`quantize`] rounds a
//! carrier value onto that format's grid with round-to-nearest, ties-to-even,
//! gradual underflow and overflow to infinity.
//!
//! For formats with at most 26 significand bits, evaluating `+ - * /` in the
//! carrier and quantizing once is correctly rounded (no double-rounding hazard,
//! since 53 >= 2p + 2). Wider formats get faithful results.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const SIGN_MASK: u64 = 1 << 63;
const FRAC_MASK: u64 = (1 << 52) - 1;
const IMPLICIT_BIT: u64 = 1 << 52;

/// An emulated binary floating-point format.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloatFormat {
    exponent_bits: u8,
    mantissa_bits: u8,
}

impl FloatFormat {
    pub const BF16: FloatFormat = FloatFormat::preset(8, 7);
    pub const FP16: FloatFormat = FloatFormat::preset(5, 10);
    pub const FP32: FloatFormat = FloatFormat::preset(8, 23);
    pub const FP64: FloatFormat = FloatFormat::preset(11, 52);

    /// The four presets in increasing precision order.
    pub const PRESETS: [FloatFormat; 4] = [Self::BF16, Self::FP16, Self::FP32, Self::FP64];

    const fn preset(exponent_bits: u8, mantissa_bits: u8) -> Self {
        FloatFormat {
            exponent_bits,
            mantissa_bits,
        }
    }

    /// Builds a format, checking that it embeds in the `f64` carrier.
    pub fn new(exponent_bits: u32, mantissa_bits: u32) -> Result<Self> {
        if !(2..=11).contains(&exponent_bits) {
            return Err(Error::invalid(format!(
                "exponent_bits must lie in [2, 11], got {exponent_bits}"
            )));
        }
        if !(1..=52).contains(&mantissa_bits) {
            return Err(Error::invalid(format!(
                "mantissa_bits must lie in [1, 52], got {mantissa_bits}"
            )));
        }
        Ok(FloatFormat {
            exponent_bits: exponent_bits as u8,
            mantissa_bits: mantissa_bits as u8,
        })
    }

    pub fn exponent_bits(self) -> u32 {
        self.exponent_bits as u32
    }

    /// Explicit stored fraction bits, excluding the implicit leading one.
    pub fn mantissa_bits(self) -> u32 {
        self.mantissa_bits as u32
    }

    /// Short identifier: the preset name, or `e<E>m<M>`.
    pub fn name(self) -> String {
        match self.preset_name() {
            Some(name) => name.to_string(),
            None => format!("e{}m{}", self.exponent_bits, self.mantissa_bits),
        }
    }

    fn preset_name(self) -> Option<&'static str> {
        match self {
            Self::BF16 => Some("bf16"),
            Self::FP16 => Some("fp16"),
            Self::FP32 => Some("fp32"),
            Self::FP64 => Some("fp64"),
            _ => None,
        }
    }

    /// True when the format is the carrier itself and quantization is the identity.
    pub fn is_carrier(self) -> bool {
        self == Self::FP64
    }

    fn bias(self) -> i32 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    /// Exponent of the smallest positive normal number.
    pub fn min_exponent(self) -> i32 {
        1 - self.bias()
    }

    /// Exponent of the largest finite number.
    pub fn max_exponent(self) -> i32 {
        self.bias()
    }

    /// Largest finite value, `(2 - 2^-m) * 2^emax`.
    pub fn max_finite(self) -> f64 {
        let m = self.mantissa_bits();
        compose((1u64 << (m + 1)) - 1, self.max_exponent() - m as i32)
    }

    pub fn min_positive_normal(self) -> f64 {
        compose(1, self.min_exponent())
    }

    pub fn min_positive_subnormal(self) -> f64 {
        compose(1, self.min_exponent() - self.mantissa_bits() as i32)
    }

    /// Unit roundoff `2^-(m+1)`.
    pub fn unit_roundoff(self) -> f64 {
        compose(1, -(self.mantissa_bits() as i32) - 1)
    }
}

impl fmt::Debug for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(e{}m{})", self.name(), self.exponent_bits, self.mantissa_bits)
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FloatFormat {
    type Err = Error;

    /// Accepts `bf16`, `fp16`, `fp32`, `fp64` (case-insensitive) or `e<E>m<M>`,
    /// optionally wrapped in parentheses.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = t
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(&t);
        match t {
            "bf16" => return Ok(Self::BF16),
            "fp16" => return Ok(Self::FP16),
            "fp32" => return Ok(Self::FP32),
            "fp64" => return Ok(Self::FP64),
            _ => {}
        }
        let bad = || Error::invalid(format!("unrecognised float format {s:?}"));
        let rest = t.strip_prefix('e').ok_or_else(bad)?;
        let (e, m) = rest.split_once('m').ok_or_else(bad)?;
        let e: u32 = e.parse().map_err(|_| bad())?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        FloatFormat::new(e, m)
    }
}

impl Serialize for FloatFormat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for FloatFormat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Builds `sig * 2^exp` exactly. Caller guarantees the value fits the carrier
/// (at or above 2^-1074 granularity); values past `f64::MAX` become infinity.
fn compose(sig: u64, exp: i32) -> f64 {
    if sig == 0 {
        return 0.0;
    }
    let width = 64 - sig.leading_zeros() as i32;
    let top = width - 1 + exp;
    if top > 1023 {
        return f64::INFINITY;
    }
    if top >= -1022 {
        let frac = if width <= 53 {
            (sig << (53 - width)) & FRAC_MASK
        } else {
            // only reachable for exact inputs wider than the carrier; never rounds
            (sig >> (width - 53)) & FRAC_MASK
        };
        f64::from_bits((((top + 1023) as u64) << 52) | frac)
    } else {
        debug_assert!(exp >= -1074);
        f64::from_bits(sig << (exp + 1074))
    }
}

/// `sig >> shift` rounded to nearest, ties to even.
#[inline]
fn shift_round_even(sig: u64, shift: u32) -> u64 {
    if shift == 0 {
        return sig;
    }
    if shift >= 64 {
        return 0;
    }
    let kept = sig >> shift;
    let rem = sig & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if rem > half || (rem == half && kept & 1 == 1) {
        kept + 1
    } else {
        kept
    }
}

/// Rounds `x` to the nearest value representable in `fmt` (ties to even).
///
/// NaN stays NaN, infinities and signed zeros pass through, magnitudes that
/// round past the largest finite value become infinity, and tiny values
/// underflow gradually through the subnormal range.
#[inline]
pub fn quantize(x: f64, fmt: FloatFormat) -> f64 {
    if fmt.is_carrier() || !x.is_finite() || x == 0.0 {
        return x;
    }
    let bits = x.to_bits();
    let sign = bits & SIGN_MASK;
    let biased = ((bits >> 52) & 0x7ff) as i32;

    if biased != 0 && biased - 1023 >= fmt.min_exponent() {
        // Target-normal range: round the f64 pattern at bit `drop` directly.
        // A carry out of the fraction bumps the exponent field, which is exactly
        // the right result.
        let drop = 52 - fmt.mantissa_bits();
        let abs = bits & !SIGN_MASK;
        let low_mask = (1u64 << drop) - 1;
        let rounded = if drop == 0 {
            abs
        } else {
            let odd = (abs >> drop) & 1;
            (abs + (low_mask >> 1) + odd) & !low_mask
        };
        let max_bits = (((fmt.max_exponent() + 1023) as u64) << 52) | (FRAC_MASK & !low_mask);
        let magnitude = if rounded > max_bits {
            f64::INFINITY.to_bits()
        } else {
            rounded
        };
        return f64::from_bits(magnitude | sign);
    }

    let frac = bits & FRAC_MASK;
    // |x| = sig * 2^lsb_exp
    let (sig, lsb_exp) = if biased == 0 {
        (frac, -1074)
    } else {
        (frac | IMPLICIT_BIT, biased - 1075)
    };
    let top = 63 - sig.leading_zeros() as i32 + lsb_exp;
    let quantum_exp = top.max(fmt.min_exponent()) - fmt.mantissa_bits() as i32;

    let magnitude = if quantum_exp <= lsb_exp {
        f64::from_bits(bits & !SIGN_MASK)
    } else {
        let kept = shift_round_even(sig, (quantum_exp - lsb_exp) as u32);
        compose(kept, quantum_exp)
    };
    let magnitude = if magnitude > fmt.max_finite() {
        f64::INFINITY
    } else {
        magnitude
    };
    f64::from_bits(magnitude.to_bits() | sign)
}

/// Spacing of the `fmt` grid at `x`: `2^(max(floor(log2|x|), emin) - m)`.
///
/// For zero this is the smallest subnormal; for non-finite input it is NaN.
pub fn ulp(x: f64, fmt: FloatFormat) -> f64 {
    if !x.is_finite() {
        return f64::NAN;
    }
    let m = fmt.mantissa_bits() as i32;
    if x == 0.0 {
        return compose(1, fmt.min_exponent() - m);
    }
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let top = if biased == 0 {
        63 - (bits & FRAC_MASK).leading_zeros() as i32 - 1074
    } else {
        biased - 1023
    };
    compose(1, top.max(fmt.min_exponent()) - m)
}

/// Elementary operations available to the kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Max,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Exp => 1,
            _ => 2,
        }
    }
}

/// NaN-propagating maximum (unlike `f64::max`, which discards NaN).
#[inline]
fn max_nan(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else if b > a {
        b
    } else {
        a
    }
}

/// Evaluates `op` in the carrier and rounds the result to `fmt`.
///
/// `exp` uses the portable `libm` implementation so results do not depend on
/// the platform's math library. `max` returns an operand unchanged.
///
/// Panics if `operands.len()` does not match the operation's arity.
pub fn rounded_op(op: Op, operands: &[f64], fmt: FloatFormat) -> f64 {
    assert_eq!(
        operands.len(),
        op.arity(),
        "{op:?} takes {} operand(s)",
        op.arity()
    );
    let a = operands[0];
    match op {
        Op::Add => quantize(a + operands[1], fmt),
        Op::Sub => quantize(a - operands[1], fmt),
        Op::Mul => quantize(a * operands[1], fmt),
        Op::Div => quantize(a / operands[1], fmt),
        Op::Exp => quantize(libm::exp(a), fmt),
        Op::Max => max_nan(a, operands[1]),
    }
}

/// Arithmetic policy for one kernel run: the target format plus whether
/// reductions (dot products, row sums) accumulate in the carrier and round once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arithmetic {
    pub format: FloatFormat,
    pub accumulate_in_carrier: bool,
}

impl From<FloatFormat> for Arithmetic {
    fn from(format: FloatFormat) -> Self {
        Arithmetic::per_op(format)
    }
}

impl Arithmetic {
    /// Every elementary step rounds to `format`.
    pub fn per_op(format: FloatFormat) -> Self {
        Arithmetic {
            format,
            accumulate_in_carrier: false,
        }
    }

    /// Reductions accumulate at 64 bits and round only the final sum.
    pub fn carrier_accumulate(format: FloatFormat) -> Self {
        Arithmetic {
            format,
            accumulate_in_carrier: true,
        }
    }

    pub fn with_format(self, format: FloatFormat) -> Self {
        Arithmetic { format, ..self }
    }

    #[inline]
    pub fn round(&self, x: f64) -> f64 {
        quantize(x, self.format)
    }

    #[inline]
    pub fn add(&self, a: f64, b: f64) -> f64 {
        quantize(a + b, self.format)
    }

    #[inline]
    pub fn sub(&self, a: f64, b: f64) -> f64 {
        quantize(a - b, self.format)
    }

    #[inline]
    pub fn mul(&self, a: f64, b: f64) -> f64 {
        quantize(a * b, self.format)
    }

    #[inline]
    pub fn div(&self, a: f64, b: f64) -> f64 {
        quantize(a / b, self.format)
    }

    #[inline]
    pub fn exp(&self, a: f64) -> f64 {
        quantize(libm::exp(a), self.format)
    }

    #[inline]
    pub fn max(&self, a: f64, b: f64) -> f64 {
        max_nan(a, b)
    }

    /// Left-to-right dot product.
    #[inline]
    pub fn dot(&self, xs: &[f64], ys: &[f64]) -> f64 {
        debug_assert_eq!(xs.len(), ys.len());
        if self.accumulate_in_carrier {
            let mut acc = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                acc += x * y;
            }
            self.round(acc)
        } else {
            let mut acc = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                acc = self.add(acc, self.mul(*x, *y));
            }
            acc
        }
    }

    /// Strided dot product: `xs[i] * ys[offset + i * stride]`.
    #[inline]
    pub fn dot_strided(&self, xs: &[f64], ys: &[f64], offset: usize, stride: usize) -> f64 {
        if self.accumulate_in_carrier {
            let mut acc = 0.0;
            for (i, x) in xs.iter().enumerate() {
                acc += x * ys[offset + i * stride];
            }
            self.round(acc)
        } else {
            let mut acc = 0.0;
            for (i, x) in xs.iter().enumerate() {
                acc = self.add(acc, self.mul(*x, ys[offset + i * stride]));
            }
            acc
        }
    }

    /// Left-to-right sum.
    #[inline]
    pub fn sum(&self, xs: &[f64]) -> f64 {
        if self.accumulate_in_carrier {
            self.round(xs.iter().fold(0.0, |acc, x| acc + x))
        } else {
            xs.iter().fold(0.0, |acc, x| self.add(acc, *x))
        }
    }
}
