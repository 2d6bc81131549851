//! Precision, sequence-length and block-geometry sweeps on shared inputs.
//!
//! Every sweep point draws `Q`, `K`, `V` once in the carrier from its seed and
//! feeds format-quantized copies of that draw to each kernel, so formats and
//! geometries are always compared on the same underlying sample.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::attention::{
    baseline_attention, flash_attention, perturb_geometry, AttentionConfig, BlockGeometry,
    Perturbation, Variant,
};
use crate::error::{Error, Result};
use crate::linalg::{carrier_draw, InputDistribution, Matrix};
use crate::metrics::{golden_deviation, quantile, DeviationReport};
use crate::numerics::{Arithmetic, FloatFormat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Precision,
    SeqLen,
    BlockArea,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Precision => "precision",
            Axis::SeqLen => "seq_len",
            Axis::BlockArea => "block_area",
        }
    }
}

/// One point on a sweep axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AxisValue {
    Format(FloatFormat),
    Count(usize),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Format(x) => write!(f, "{x}"),
            AxisValue::Count(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for AxisValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AxisValue::Format(x) => x.serialize(s),
            AxisValue::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

/// What a row's deviation is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Baseline attention at FP64 on the carrier draw.
    Golden,
    /// The baseline kernel at the same format.
    Paired,
}

impl Reference {
    pub fn name(self) -> &'static str {
        match self {
            Reference::Golden => "golden",
            Reference::Paired => "paired",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<AxisValue>,
    pub base: AttentionConfig,
    pub seeds: Vec<u64>,
    pub perturbation: Option<Perturbation>,
    pub distribution: InputDistribution,
    /// Formats evaluated at each point of a block sweep.
    pub formats: Vec<FloatFormat>,
}

fn format_key(f: FloatFormat) -> (u32, u32) {
    (f.mantissa_bits(), f.exponent_bits())
}

impl SweepSpec {
    fn new(axis: Axis, values: Vec<AxisValue>, base: AttentionConfig) -> Self {
        SweepSpec {
            axis,
            values,
            base,
            seeds: (0..10).collect(),
            perturbation: None,
            distribution: InputDistribution::StandardNormal,
            formats: FloatFormat::PRESETS.to_vec(),
        }
    }

    /// BF16, FP16, FP32, FP64 at `N = 512`, `d = 64`, `(Br, Bc) = (64, 64)`.
    pub fn precision_default() -> Self {
        let values = FloatFormat::PRESETS.iter().map(|&f| AxisValue::Format(f)).collect();
        SweepSpec::new(Axis::Precision, values, AttentionConfig::default())
    }

    /// `N` in {64, 128, 256, 512} at BF16 with `(Br, Bc) = (64, 64)`.
    pub fn seqlen_default() -> Self {
        let values = [64, 128, 256, 512].map(AxisValue::Count).to_vec();
        SweepSpec::new(Axis::SeqLen, values, AttentionConfig::default())
    }

    /// Areas 1024 to 65536 around a `(64, 256)` tile at `N = 512`.
    pub fn block_default() -> Self {
        let base = AttentionConfig {
            sram_elems: Some(65536),
            ..AttentionConfig::default()
        };
        let values = [1024, 4096, 16384, 65536].map(AxisValue::Count).to_vec();
        SweepSpec::new(Axis::BlockArea, values, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one axis value"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs at least one seed"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::invalid("sweep seeds must be distinct"));
        }
        let ordered = match self.axis {
            Axis::Precision => {
                let keys = self
                    .values
                    .iter()
                    .map(|v| match v {
                        AxisValue::Format(f) => Ok(format_key(*f)),
                        AxisValue::Count(_) => {
                            Err(Error::invalid("precision sweep values must be formats"))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                keys.windows(2).all(|w| w[0] < w[1])
            }
            Axis::SeqLen | Axis::BlockArea => {
                let counts = self
                    .values
                    .iter()
                    .map(|v| match v {
                        AxisValue::Count(n) if *n >= 1 => Ok(*n),
                        AxisValue::Count(_) => {
                            Err(Error::invalid(format!("{} values must be >= 1", self.axis.name())))
                        }
                        AxisValue::Format(_) => Err(Error::invalid(format!(
                            "{} values must be integers",
                            self.axis.name()
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                counts.windows(2).all(|w| w[0] < w[1])
            }
        };
        if !ordered {
            return Err(Error::invalid("sweep values must be strictly increasing"));
        }
        if self.axis == Axis::BlockArea && self.formats.is_empty() {
            return Err(Error::invalid("block sweep needs at least one format"));
        }
        if matches!(self.perturbation, Some(Perturbation::ScaleArea(_))) {
            return Err(Error::invalid(
                "perturbation must be swap_dims or square_of_equal_area",
            ));
        }
        if self.base.head_dim == 0 || self.base.seq_len == 0 {
            return Err(Error::invalid("seq_len and head_dim must be >= 1"));
        }
        self.base.geometry()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: AxisValue,
    pub seed: u64,
    pub variant: Variant,
    pub format: FloatFormat,
    /// Tile shape actually used; `None` for baseline rows.
    pub geometry: Option<BlockGeometry>,
    pub vs: Reference,
    pub report: DeviationReport,
    /// Set when the requested tile exceeded `N` and was clamped.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

struct Inputs {
    q: Matrix,
    k: Matrix,
    v: Matrix,
}

impl Inputs {
    fn draw(n: usize, d: usize, seed: u64, dist: InputDistribution) -> Result<Self> {
        let m = |stream| {
            Ok::<_, Error>(Matrix::from_quantized(
                n,
                d,
                carrier_draw(n, d, seed, stream, dist)?,
                FloatFormat::FP64,
            ))
        };
        Ok(Inputs {
            q: m(0)?,
            k: m(1)?,
            v: m(2)?,
        })
    }

    fn at(&self, fmt: FloatFormat) -> Inputs {
        Inputs {
            q: self.q.to_format(fmt),
            k: self.k.to_format(fmt),
            v: self.v.to_format(fmt),
        }
    }

    fn baseline(&self, arith: Arithmetic) -> Result<Matrix> {
        baseline_attention(&self.q, &self.k, &self.v, arith)
    }

    fn flash(&self, arith: Arithmetic, geom: BlockGeometry) -> Result<Matrix> {
        flash_attention(&self.q, &self.k, &self.v, arith, geom)
    }
}

fn golden(inputs: &Inputs) -> Result<Matrix> {
    inputs.baseline(Arithmetic::per_op(FloatFormat::FP64))
}

struct RowTemplate {
    axis: Axis,
    value: AxisValue,
    seed: u64,
    format: FloatFormat,
}

impl RowTemplate {
    fn row(
        &self,
        variant: Variant,
        geometry: Option<(BlockGeometry, bool)>,
        vs: Reference,
        report: DeviationReport,
    ) -> SweepRow {
        let clamped = geometry.is_some_and(|(_, c)| c);
        let report = if clamped {
            report.with_context("clamped", true)
        } else {
            report
        };
        SweepRow {
            axis: self.axis,
            value: self.value,
            seed: self.seed,
            variant,
            format: self.format,
            geometry: geometry.map(|(g, _)| g),
            vs,
            report,
            clamped,
        }
    }
}

fn clamp_flag(geom: BlockGeometry, n: usize) -> (BlockGeometry, bool) {
    let c = geom.clamped(n);
    (c, c != geom)
}

fn point_context(e: Error, axis: Axis, value: AxisValue, seed: u64) -> Error {
    e.context(format!("{} = {value}, seed {seed}", axis.name()))
}

fn check_axis(spec: &SweepSpec, axis: Axis) -> Result<()> {
    if spec.axis != axis {
        return Err(Error::invalid(format!(
            "expected a {} sweep, got {}",
            axis.name(),
            spec.axis.name()
        )));
    }
    spec.validate()
}

/// Per format and seed: golden, then baseline and flash at the format.
///
/// Rows per point: baseline vs golden, flash vs golden, flash vs baseline.
pub fn run_precision_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    check_axis(spec, Axis::Precision)?;
    let base = &spec.base;
    let geom = base.geometry()?;
    let (n, d) = (base.seq_len, base.head_dim);
    let draws: Vec<(Inputs, Matrix)> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let inputs = Inputs::draw(n, d, seed, spec.distribution)?;
            let g = golden(&inputs)?;
            Ok((inputs, g))
        })
        .collect::<Result<_>>()?;
    let points: Vec<(AxisValue, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.seeds.len()).map(move |i| (v, i)))
        .collect();
    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|&(value, i)| {
            let seed = spec.seeds[i];
            let AxisValue::Format(fmt) = value else {
                unreachable!("validated")
            };
            let (carrier, gold) = &draws[i];
            let t = RowTemplate {
                axis: Axis::Precision,
                value,
                seed,
                format: fmt,
            };
            let run = || -> Result<Vec<SweepRow>> {
                let arith = Arithmetic {
                    format: fmt,
                    accumulate_in_carrier: base.accumulate_in_carrier,
                };
                let inputs = carrier.at(fmt);
                let geometry = clamp_flag(geom, n);
                let b = inputs.baseline(arith)?;
                let f = inputs.flash(arith, geometry.0)?;
                Ok(vec![
                    t.row(Variant::Baseline, None, Reference::Golden, golden_deviation(&b, gold)?),
                    t.row(Variant::Flash, Some(geometry), Reference::Golden, golden_deviation(&f, gold)?),
                    t.row(Variant::Flash, Some(geometry), Reference::Paired, golden_deviation(&f, &b)?),
                ])
            };
            run().map_err(|e| point_context(e, Axis::Precision, value, seed))
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        spec: spec.clone(),
        rows: rows.into_iter().flatten().collect(),
    })
}

/// Per `N`: fresh `N x d` inputs, flash vs baseline at the base format with
/// the base tile shape held fixed.
pub fn run_seqlen_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    check_axis(spec, Axis::SeqLen)?;
    let base = &spec.base;
    let geom = base.geometry()?;
    let fmt = base.format;
    let arith = base.arithmetic();
    let points: Vec<(AxisValue, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|&(value, seed)| {
            let AxisValue::Count(n) = value else {
                unreachable!("validated")
            };
            let run = || -> Result<SweepRow> {
                let inputs = Inputs::draw(n, base.head_dim, seed, spec.distribution)?.at(fmt);
                let geometry = clamp_flag(geom, n);
                let b = inputs.baseline(arith)?;
                let f = inputs.flash(arith, geometry.0)?;
                let t = RowTemplate {
                    axis: Axis::SeqLen,
                    value,
                    seed,
                    format: fmt,
                };
                Ok(t.row(Variant::Flash, Some(geometry), Reference::Paired, golden_deviation(&f, &b)?))
            };
            run().map_err(|e| point_context(e, Axis::SeqLen, value, seed))
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        spec: spec.clone(),
        rows,
    })
}

/// The tile used at one block-sweep area: the base tile scaled to `area`,
/// then the optional perturbation.
pub fn block_sweep_geometry(
    base: BlockGeometry,
    area: usize,
    perturbation: Option<Perturbation>,
) -> BlockGeometry {
    let scaled = perturb_geometry(
        base,
        Perturbation::ScaleArea(area as f64 / base.area() as f64),
    );
    match perturbation {
        Some(p) => perturb_geometry(scaled, p),
        None => scaled,
    }
}

/// Per area, seed and format: baseline vs golden, flash vs golden and flash vs
/// baseline, with the tile derived by [`block_sweep_geometry`].
pub fn run_block_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    check_axis(spec, Axis::BlockArea)?;
    let base = &spec.base;
    let base_geom = base.geometry()?;
    let (n, d) = (base.seq_len, base.head_dim);
    let arith = |fmt| Arithmetic {
        format: fmt,
        accumulate_in_carrier: base.accumulate_in_carrier,
    };
    type Prepared = (Matrix, Vec<(Inputs, Matrix)>);
    let prepared: Vec<Prepared> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let carrier = Inputs::draw(n, d, seed, spec.distribution)?;
            let gold = golden(&carrier)?;
            let per_format = spec
                .formats
                .iter()
                .map(|&fmt| {
                    let inputs = carrier.at(fmt);
                    let b = inputs.baseline(arith(fmt))?;
                    Ok((inputs, b))
                })
                .collect::<Result<_>>()?;
            Ok((gold, per_format))
        })
        .collect::<Result<_>>()?;
    let points: Vec<(AxisValue, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.seeds.len()).map(move |i| (v, i)))
        .collect();
    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|&(value, i)| {
            let seed = spec.seeds[i];
            let AxisValue::Count(area) = value else {
                unreachable!("validated")
            };
            let geometry = clamp_flag(block_sweep_geometry(base_geom, area, spec.perturbation), n);
            let (gold, per_format) = &prepared[i];
            let run = || -> Result<Vec<SweepRow>> {
                let mut rows = Vec::with_capacity(3 * spec.formats.len());
                for (&fmt, (inputs, b)) in spec.formats.iter().zip(per_format) {
                    let f = inputs.flash(arith(fmt), geometry.0)?;
                    let t = RowTemplate {
                        axis: Axis::BlockArea,
                        value,
                        seed,
                        format: fmt,
                    };
                    rows.push(t.row(Variant::Baseline, None, Reference::Golden, golden_deviation(b, gold)?));
                    rows.push(t.row(Variant::Flash, Some(geometry), Reference::Golden, golden_deviation(&f, gold)?));
                    rows.push(t.row(Variant::Flash, Some(geometry), Reference::Paired, golden_deviation(&f, b)?));
                }
                Ok(rows)
            };
            run().map_err(|e| point_context(e, Axis::BlockArea, value, seed))
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        spec: spec.clone(),
        rows: rows.into_iter().flatten().collect(),
    })
}

/// Dispatches on `spec.axis`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    match spec.axis {
        Axis::Precision => run_precision_sweep(spec),
        Axis::SeqLen => run_seqlen_sweep(spec),
        Axis::BlockArea => run_block_sweep(spec),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        Quartiles {
            q1: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q3: quantile(values, 0.75),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Across-seed statistics for one (value, variant, format, reference) group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointSummary {
    pub value: AxisValue,
    pub variant: Variant,
    pub format: FloatFormat,
    pub vs: Reference,
    pub geometry: Option<BlockGeometry>,
    pub seeds: usize,
    pub max_abs_diff: Quartiles,
    pub std_diff: Quartiles,
}

impl SweepResult {
    /// Groups rows by point in first-appearance order.
    pub fn summary(&self) -> Vec<PointSummary> {
        type Key = (AxisValue, Variant, FloatFormat, Reference);
        let mut groups: Vec<(Key, Option<BlockGeometry>, Vec<&SweepRow>)> = Vec::new();
        for row in &self.rows {
            let key = (row.value, row.variant, row.format, row.vs);
            match groups.iter_mut().find(|(k, _, _)| *k == key) {
                Some((_, _, rows)) => rows.push(row),
                None => groups.push((key, row.geometry, vec![row])),
            }
        }
        groups
            .into_iter()
            .map(|((value, variant, format, vs), geometry, rows)| {
                let max: Vec<f64> = rows.iter().map(|r| r.report.max_abs_diff).collect();
                let std: Vec<f64> = rows.iter().map(|r| r.report.std_diff).collect();
                PointSummary {
                    value,
                    variant,
                    format,
                    vs,
                    geometry,
                    seeds: rows.len(),
                    max_abs_diff: Quartiles::of(&max),
                    std_diff: Quartiles::of(&std),
                }
            })
            .collect()
    }

    /// The summary entry for one group, if present.
    pub fn point(
        &self,
        value: AxisValue,
        variant: Variant,
        format: FloatFormat,
        vs: Reference,
    ) -> Option<PointSummary> {
        self.summary().into_iter().find(|p| {
            p.value == value && p.variant == variant && p.format == format && p.vs == vs
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(axis: Axis, values: Vec<AxisValue>) -> SweepSpec {
        SweepSpec {
            axis,
            values,
            base: AttentionConfig {
                seq_len: 32,
                head_dim: 8,
                sram_elems: None,
                block_rows: 8,
                block_cols: 8,
                ..AttentionConfig::default()
            },
            seeds: vec![0, 1, 2],
            perturbation: None,
            distribution: InputDistribution::StandardNormal,
            formats: vec![FloatFormat::BF16, FloatFormat::FP64],
        }
    }

    fn formats() -> Vec<AxisValue> {
        FloatFormat::PRESETS.iter().map(|&f| AxisValue::Format(f)).collect()
    }

    #[test]
    fn defaults_validate() {
        for spec in [
            SweepSpec::precision_default(),
            SweepSpec::seqlen_default(),
            SweepSpec::block_default(),
        ] {
            spec.validate().unwrap();
        }
        let g = SweepSpec::block_default().base.geometry().unwrap();
        assert_eq!((g.block_rows, g.block_cols), (64, 256));
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = small(Axis::SeqLen, vec![]);
        assert!(s.validate().is_err());
        s.values = vec![AxisValue::Count(64), AxisValue::Count(32)];
        assert!(s.validate().is_err());
        s.values = vec![AxisValue::Count(0)];
        assert!(s.validate().is_err());
        s.values = vec![AxisValue::Count(16)];
        s.seeds = vec![];
        assert!(s.validate().is_err());
        s.seeds = vec![1, 1];
        assert!(s.validate().is_err());
        let mut p = small(Axis::Precision, vec![AxisValue::Count(3)]);
        assert!(p.validate().is_err());
        p.values = vec![AxisValue::Format(FloatFormat::FP32), AxisValue::Format(FloatFormat::BF16)];
        assert!(p.validate().is_err());
        assert!(run_seqlen_sweep(&p).is_err());
    }

    #[test]
    fn precision_rows_and_fp64_point() {
        let res = run_precision_sweep(&small(Axis::Precision, formats())).unwrap();
        assert_eq!(res.rows.len(), 4 * 3 * 3);
        for r in res.rows.iter().filter(|r| r.format == FloatFormat::FP64) {
            assert!(r.report.max_abs_diff <= 1e-12, "{r:?}");
        }
        let bf = res
            .point(AxisValue::Format(FloatFormat::BF16), Variant::Flash, FloatFormat::BF16, Reference::Golden)
            .unwrap();
        assert!(bf.max_abs_diff.median > 0.0);
        assert_eq!(bf.seeds, 3);
    }

    #[test]
    fn triangle_inequality_holds_per_point() {
        let res = run_precision_sweep(&small(Axis::Precision, formats())).unwrap();
        for chunk in res.rows.chunks(3) {
            let (b, f, p) = (&chunk[0].report, &chunk[1].report, &chunk[2].report);
            assert!(p.max_abs_diff <= b.max_abs_diff + f.max_abs_diff + 1e-15);
        }
    }

    #[test]
    fn seqlen_sweep_flags_clamping() {
        let res = run_seqlen_sweep(&small(
            Axis::SeqLen,
            vec![AxisValue::Count(4), AxisValue::Count(16)],
        ))
        .unwrap();
        assert_eq!(res.rows.len(), 6);
        let first = &res.rows[0];
        assert!(first.clamped);
        assert_eq!(first.geometry, Some(BlockGeometry::new(4, 4).unwrap()));
        assert_eq!(first.report.context.get("clamped").map(String::as_str), Some("true"));
        assert!(!res.rows[3].clamped);
    }

    #[test]
    fn block_sweep_single_tile_matches_baseline_at_fp64() {
        let mut spec = small(
            Axis::BlockArea,
            vec![AxisValue::Count(16), AxisValue::Count(1024)],
        );
        spec.perturbation = Some(Perturbation::SwapDims);
        let res = run_block_sweep(&spec).unwrap();
        assert_eq!(res.rows.len(), 2 * 3 * 2 * 3);
        let big: Vec<_> = res
            .rows
            .iter()
            .filter(|r| r.value == AxisValue::Count(1024) && r.format == FloatFormat::FP64)
            .collect();
        for r in big {
            assert!(r.report.max_abs_diff <= 1e-12);
            if r.variant == Variant::Flash {
                assert_eq!(r.geometry, Some(BlockGeometry::new(32, 32).unwrap()));
            }
        }
    }

    #[test]
    fn sweeps_are_deterministic_and_ordered() {
        let spec = small(Axis::Precision, formats());
        let a = run_precision_sweep(&spec).unwrap();
        let b = run_precision_sweep(&spec).unwrap();
        assert_eq!(a, b);
        let order: Vec<(AxisValue, u64)> = a.rows.iter().step_by(3).map(|r| (r.value, r.seed)).collect();
        let mut sorted = order.clone();
        sorted.sort_by_key(|(v, s)| (match v { AxisValue::Format(f) => format_key(*f), _ => (0, 0) }, *s));
        assert_eq!(order, sorted);
    }

    #[test]
    fn block_geometry_scaling() {
        let base = BlockGeometry::new(64, 256).unwrap();
        assert_eq!(block_sweep_geometry(base, 1024, None), BlockGeometry::new(16, 64).unwrap());
        assert_eq!(
            block_sweep_geometry(base, 16384, Some(Perturbation::SwapDims)),
            BlockGeometry::new(256, 64).unwrap()
        );
        assert_eq!(
            block_sweep_geometry(base, 4096, Some(Perturbation::SquareOfEqualArea)),
            BlockGeometry::new(64, 64).unwrap()
        );
    }
}
