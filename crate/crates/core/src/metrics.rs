//! Deviation and distance metrics, always evaluated in the `f64` carrier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Summary of `output - reference` over all elements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub max_abs_diff: f64,
    /// Mean of the signed differences.
    pub mean_diff: f64,
    /// Population standard deviation of the signed differences.
    pub std_diff: f64,
    pub n_elements: usize,
    pub context: BTreeMap<String, String>,
}

impl DeviationReport {
    pub fn with_context(mut self, key: &str, value: impl ToString) -> Self {
        self.context.insert(key.to_string(), value.to_string());
        self
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_no_nan(a: &[f64], b: &[f64]) -> Result<()> {
    let count = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_nan() || y.is_nan())
        .count();
    if count > 0 {
        return Err(Error::NanPoisoned {
            count,
            total: a.len(),
        });
    }
    Ok(())
}

/// `max |a - b|` over the two slices; NaN anywhere is reported as
/// [`Error::NanPoisoned`] rather than silently dropped.
pub fn max_abs_difference(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    check_no_nan(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

pub fn max_difference(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_same_shape(a, b)?;
    max_abs_difference(a.as_slice(), b.as_slice())
}

/// Mean and population standard deviation of `a - b`.
pub fn diff_stats(a: &Matrix, b: &Matrix) -> Result<(f64, f64)> {
    check_same_shape(a, b)?;
    let (a, b) = (a.as_slice(), b.as_slice());
    check_no_nan(a, b)?;
    if a.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = a.len() as f64;
    let mean = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n;
    let var = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let r = (x - y) - mean;
            r * r
        })
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}

/// Compares `output` against a golden reference (baseline attention at FP64).
pub fn golden_deviation(output: &Matrix, golden: &Matrix) -> Result<DeviationReport> {
    let max_abs_diff = max_difference(output, golden)?;
    let (mean_diff, std_diff) = diff_stats(output, golden)?;
    Ok(DeviationReport {
        max_abs_diff,
        mean_diff,
        std_diff,
        n_elements: output.as_slice().len(),
        context: BTreeMap::new(),
    }
    .with_context("format", output.format()))
}

/// Wasserstein-1 distance between the empirical distributions of two samples.
///
/// Equal sizes pair sorted values directly; unequal sizes integrate
/// `|F_x - F_y|` between consecutive merged breakpoints.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::invalid("wasserstein_1d needs two non-empty samples"));
    }
    if xs.iter().chain(ys).any(|x| x.is_nan()) {
        return Err(Error::NanPoisoned {
            count: xs.iter().chain(ys).filter(|x| x.is_nan()).count(),
            total: xs.len() + ys.len(),
        });
    }
    let mut xs = xs.to_vec();
    let mut ys = ys.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);

    if xs.len() == ys.len() {
        let total: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / xs.len() as f64);
    }

    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let mut merged: Vec<f64> = xs.iter().chain(&ys).copied().collect();
    merged.sort_by(f64::total_cmp);
    let (mut ix, mut iy) = (0, 0);
    let mut total = 0.0;
    for w in merged.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        while ix < xs.len() && xs[ix] <= lo {
            ix += 1;
        }
        while iy < ys.len() && ys[iy] <= lo {
            iy += 1;
        }
        let gap = hi - lo;
        if gap > 0.0 {
            total += (ix as f64 / nx - iy as f64 / ny).abs() * gap;
        }
    }
    Ok(total)
}

/// Per-tensor Wasserstein distances and their size-weighted mean.
pub fn weighted_wasserstein<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a [f64], &'a [f64])>,
) -> Result<(f64, Vec<(String, f64)>)> {
    let mut per_tensor = Vec::new();
    let mut weighted = 0.0;
    let mut total = 0usize;
    for (name, a, b) in pairs {
        let w = wasserstein_1d(a, b)?;
        weighted += w * a.len() as f64;
        total += a.len();
        per_tensor.push((name.to_string(), w));
    }
    if total == 0 {
        return Err(Error::invalid("no tensors to compare"));
    }
    Ok((weighted / total as f64, per_tensor))
}

/// Median with the two middle values averaged for even lengths.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (the "type 7" definition). NaN for empty input.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::FloatFormat;

    fn mat(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows, FloatFormat::FP64).unwrap()
    }

    #[test]
    fn max_difference_examples() {
        let a = mat(&[vec![1.0, 2.0]]);
        let b = mat(&[vec![0.0, 5.0]]);
        assert_eq!(max_difference(&a, &a).unwrap(), 0.0);
        assert_eq!(max_difference(&a, &b).unwrap(), 3.0);
        assert!(max_difference(&a, &mat(&[vec![1.0], vec![2.0]])).is_err());
    }

    #[test]
    fn nan_is_flagged() {
        let a = mat(&[vec![1.0, f64::NAN]]);
        let b = mat(&[vec![1.0, 2.0]]);
        assert!(matches!(
            max_difference(&a, &b),
            Err(Error::NanPoisoned { count: 1, total: 2 })
        ));
        assert!(matches!(diff_stats(&a, &b), Err(Error::NanPoisoned { .. })));
    }

    #[test]
    fn diff_stats_examples() {
        let a = mat(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        assert_eq!(diff_stats(&a, &a).unwrap(), (0.0, 0.0));
        let shifted = mat(&[vec![1.25, -1.75], vec![0.75, 3.25]]);
        assert_eq!(diff_stats(&shifted, &a).unwrap(), (0.25, 0.0));
    }

    #[test]
    fn golden_against_itself_is_zero() {
        let a = mat(&[vec![1.0, -2.0]]);
        let r = golden_deviation(&a, &a).unwrap();
        assert_eq!((r.max_abs_diff, r.mean_diff, r.std_diff), (0.0, 0.0, 0.0));
        assert_eq!(r.n_elements, 2);
        assert_eq!(r.context["format"], "fp64");
    }

    #[test]
    fn wasserstein_examples() {
        let xs = [0.3, -1.0, 2.5];
        assert_eq!(wasserstein_1d(&xs, &xs).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_unequal_sizes() {
        // point mass at 0 vs half at 0, half at 2: move half the mass distance 2
        assert!((wasserstein_1d(&[0.0], &[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        // {0, 1, 2} vs {1}: (1 + 0 + 1) / 3
        assert!((wasserstein_1d(&[0.0, 1.0, 2.0], &[1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // duplicated sample describes the same distribution
        assert!(wasserstein_1d(&[1.0, 3.0], &[3.0, 1.0, 1.0, 3.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn weighted_aggregate() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 1.0, 1.0];
        let c = [0.0];
        let d = [5.0];
        let (agg, per) =
            weighted_wasserstein([("a", &a[..], &b[..]), ("c", &c[..], &d[..])]).unwrap();
        assert_eq!(per, vec![("a".to_string(), 1.0), ("c".to_string(), 5.0)]);
        assert_eq!(agg, (3.0 + 5.0) / 4.0);
    }

    #[test]
    fn quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert!(median(&[]).is_nan());
    }
}
