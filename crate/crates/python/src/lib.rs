//! Python bindings for numdev.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use numdev::attention::{BlockGeometry, Variant};
use numdev::config::hex;
use numdev::linalg::{random_matrix_with, InputDistribution};
use numdev::report;
use numdev::sweeps::Axis;
use numdev::trainer::Scenario;
use numdev::{Arithmetic, Error, ExperimentConfig};

fn py_err(e: Error) -> PyErr {
    match e.root() {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn from_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A binary floating-point format with the given exponent and mantissa widths.
#[pyclass(name = "FloatFormat", module = "numdev", frozen, eq, hash, from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PyFloatFormat(numdev::FloatFormat);

#[pymethods]
impl PyFloatFormat {
    #[new]
    fn new(exponent_bits: u32, mantissa_bits: u32) -> PyResult<Self> {
        numdev::FloatFormat::new(exponent_bits, mantissa_bits)
            .map(PyFloatFormat)
            .map_err(py_err)
    }

    /// Parses `bf16`, `fp16`, `fp32`, `fp64` or `e<E>m<M>`.
    #[staticmethod]
    fn parse(name: &str) -> PyResult<Self> {
        name.parse().map(PyFloatFormat).map_err(py_err)
    }

    #[staticmethod]
    fn presets() -> Vec<Self> {
        numdev::FloatFormat::PRESETS.map(PyFloatFormat).to_vec()
    }

    #[getter]
    fn exponent_bits(&self) -> u32 {
        self.0.exponent_bits()
    }

    #[getter]
    fn mantissa_bits(&self) -> u32 {
        self.0.mantissa_bits()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name()
    }

    #[getter]
    fn max_finite(&self) -> f64 {
        self.0.max_finite()
    }

    #[getter]
    fn min_positive_normal(&self) -> f64 {
        self.0.min_positive_normal()
    }

    #[getter]
    fn unit_roundoff(&self) -> f64 {
        self.0.unit_roundoff()
    }

    fn __repr__(&self) -> String {
        format!("FloatFormat('{}')", self.0)
    }

    fn __str__(&self) -> String {
        self.0.name()
    }
}

/// Accepts a `FloatFormat` or a format name.
#[derive(FromPyObject)]
enum FormatArg {
    Format(PyFloatFormat),
    Name(String),
}

impl FormatArg {
    fn get(self) -> PyResult<numdev::FloatFormat> {
        match self {
            FormatArg::Format(f) => Ok(f.0),
            FormatArg::Name(s) => s.parse().map_err(py_err),
        }
    }
}

/// A dense row-major matrix whose entries are representable in `format`.
#[pyclass(name = "Matrix", module = "numdev", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMatrix(numdev::Matrix);

#[pymethods]
impl PyMatrix {
    /// Builds a matrix from a list of rows, rounding every entry to `format`.
    #[new]
    #[pyo3(signature = (rows, format = FormatArg::Name("fp64".into())))]
    fn new(rows: Vec<Vec<f64>>, format: FormatArg) -> PyResult<Self> {
        numdev::Matrix::from_rows(&rows, format.get()?)
            .map(PyMatrix)
            .map_err(py_err)
    }

    /// Seeded i.i.d. draw (`normal` or `uniform`), one stream per matrix.
    #[staticmethod]
    #[pyo3(signature = (rows, cols, seed, format = FormatArg::Name("fp64".into()), stream = 0, distribution = "normal"))]
    fn random(
        rows: usize,
        cols: usize,
        seed: u64,
        format: FormatArg,
        stream: u64,
        distribution: &str,
    ) -> PyResult<Self> {
        let dist = match distribution {
            "normal" | "standard_normal" => InputDistribution::StandardNormal,
            "uniform" => InputDistribution::Uniform,
            other => return Err(PyValueError::new_err(format!("unknown distribution `{other}`"))),
        };
        random_matrix_with(rows, cols, seed, stream, dist, format.get()?)
            .map(PyMatrix)
            .map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[getter]
    fn format(&self) -> PyFloatFormat {
        PyFloatFormat(self.0.format())
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.0.rows()).map(|r| self.0.row(r).to_vec()).collect()
    }

    fn to_format(&self, format: FormatArg) -> PyResult<Self> {
        Ok(PyMatrix(self.0.to_format(format.get()?)))
    }

    fn transpose(&self) -> Self {
        PyMatrix(self.0.transpose())
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.0.shape();
        format!("Matrix({r}x{c}, {})", self.0.format())
    }
}

fn arithmetic(format: FormatArg, accumulate_in_carrier: bool) -> PyResult<Arithmetic> {
    Ok(Arithmetic {
        format: format.get()?,
        accumulate_in_carrier,
    })
}

/// Rounds `x` to the nearest value of `format`, ties to even.
#[pyfunction]
fn quantize(x: f64, format: FormatArg) -> PyResult<f64> {
    Ok(numdev::quantize(x, format.get()?))
}

#[pyfunction]
fn quantize_list(xs: Vec<f64>, format: FormatArg) -> PyResult<Vec<f64>> {
    let f = format.get()?;
    Ok(xs.into_iter().map(|x| numdev::quantize(x, f)).collect())
}

/// Spacing of `format` values at the magnitude of `x`.
#[pyfunction]
fn ulp(x: f64, format: FormatArg) -> PyResult<f64> {
    Ok(numdev::ulp(x, format.get()?))
}

#[pyfunction]
#[pyo3(signature = (a, b, format, accumulate_in_carrier = false))]
fn matmul(a: &PyMatrix, b: &PyMatrix, format: FormatArg, accumulate_in_carrier: bool) -> PyResult<PyMatrix> {
    let arith = arithmetic(format, accumulate_in_carrier)?;
    numdev::matmul(&a.0, &b.0, arith).map(PyMatrix).map_err(py_err)
}

/// Unfused softmax(Q K^T / sqrt(d)) V.
#[pyfunction]
#[pyo3(signature = (q, k, v, format, accumulate_in_carrier = false))]
fn baseline_attention(
    py: Python<'_>,
    q: &PyMatrix,
    k: &PyMatrix,
    v: &PyMatrix,
    format: FormatArg,
    accumulate_in_carrier: bool,
) -> PyResult<PyMatrix> {
    let arith = arithmetic(format, accumulate_in_carrier)?;
    let (q, k, v) = (&q.0, &k.0, &v.0);
    py.detach(|| numdev::attention::baseline_attention(q, k, v, arith))
        .map(PyMatrix)
        .map_err(py_err)
}

/// Tiled online-softmax attention with `block_rows x block_cols` tiles.
#[pyfunction]
#[pyo3(signature = (q, k, v, format, block_rows, block_cols, accumulate_in_carrier = false))]
#[allow(clippy::too_many_arguments)]
fn flash_attention(
    py: Python<'_>,
    q: &PyMatrix,
    k: &PyMatrix,
    v: &PyMatrix,
    format: FormatArg,
    block_rows: usize,
    block_cols: usize,
    accumulate_in_carrier: bool,
) -> PyResult<PyMatrix> {
    let arith = arithmetic(format, accumulate_in_carrier)?;
    let geom = BlockGeometry::new(block_rows, block_cols).map_err(py_err)?;
    let (q, k, v) = (&q.0, &k.0, &v.0);
    py.detach(|| numdev::attention::flash_attention(q, k, v, arith, geom))
        .map(PyMatrix)
        .map_err(py_err)
}

#[pyfunction]
fn max_difference(a: &PyMatrix, b: &PyMatrix) -> PyResult<f64> {
    numdev::max_difference(&a.0, &b.0).map_err(py_err)
}

/// Mean and population standard deviation of `a - b`.
#[pyfunction]
fn diff_stats(a: &PyMatrix, b: &PyMatrix) -> PyResult<(f64, f64)> {
    numdev::diff_stats(&a.0, &b.0).map_err(py_err)
}

#[pyfunction]
fn wasserstein_1d(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    numdev::wasserstein_1d(&xs, &ys).map_err(py_err)
}

fn load_config(config: Option<&str>) -> PyResult<ExperimentConfig> {
    match config {
        Some(text) => numdev::parse_config(text).map_err(|e| py_err(e.into())),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Parses a TOML config; returns the resolved TOML and its SHA-256.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn resolve_config(config: Option<&str>) -> PyResult<(String, String)> {
    let cfg = load_config(config)?;
    Ok((cfg.to_toml(), cfg.hash_hex()))
}

/// Outcome of one sweep.
#[pyclass(name = "SweepResult", module = "numdev", frozen)]
struct PySweepResult {
    result: numdev::SweepResult,
    hash: String,
}

#[pymethods]
impl PySweepResult {
    #[getter]
    fn axis(&self) -> &'static str {
        self.result.spec.axis.name()
    }

    /// The tidy CSV, as written by the command line.
    fn csv(&self) -> String {
        report::sweep_csv_string(&self.result, &self.hash)
    }

    /// One dict per (value, seed, variant, reference) row.
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        from_json(py, &self.result.rows)
    }

    /// Across-seed quartiles per point.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        from_json(py, &self.result.summary())
    }

    fn __len__(&self) -> usize {
        self.result.rows.len()
    }
}

/// Runs the `precision`, `seqlen` or `blocks` sweep described by `config`.
#[pyfunction]
#[pyo3(signature = (axis, config = None, seeds = None))]
fn sweep(py: Python<'_>, axis: &str, config: Option<&str>, seeds: Option<usize>) -> PyResult<PySweepResult> {
    let axis = match axis {
        "precision" => Axis::Precision,
        "seqlen" | "seq_len" => Axis::SeqLen,
        "blocks" | "block_area" => Axis::BlockArea,
        other => return Err(PyValueError::new_err(format!("unknown axis `{other}`"))),
    };
    let mut cfg = load_config(config)?;
    if let Some(n) = seeds {
        cfg.seeds = n;
        cfg.validate().map_err(|e| py_err(e.into()))?;
    }
    let spec = cfg.sweep_spec(axis);
    let result = py.detach(|| numdev::sweeps::run_sweep(&spec)).map_err(py_err)?;
    Ok(PySweepResult {
        result,
        hash: cfg.hash_hex(),
    })
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    match name {
        "baseline" => Ok(Variant::Baseline),
        "flash" => Ok(Variant::Flash),
        other => Err(PyValueError::new_err(format!("unknown variant `{other}`"))),
    }
}

/// One toy training run; returns its batch losses and checkpoint losses.
#[pyfunction]
#[pyo3(signature = (config = None, seed = 0, variant = "baseline", format = None))]
fn train_run<'py>(
    py: Python<'py>,
    config: Option<&str>,
    seed: u64,
    variant: &str,
    format: Option<FormatArg>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load_config(config)?;
    let mut run_cfg = cfg.train_config(seed);
    run_cfg.attention_variant = parse_variant(variant)?;
    if let Some(f) = format {
        run_cfg.train_format = f.get()?;
    }
    let run = py.detach(|| numdev::train_run(&run_cfg)).map_err(py_err)?;
    let checkpoints: Vec<(usize, f64)> = run.checkpoints.iter().map(|c| (c.step, c.loss)).collect();
    from_json(
        py,
        &serde_json::json!({
            "losses": run.losses,
            "checkpoints": checkpoints,
            "divergence_events": run.divergence_events,
        }),
    )
}

/// The three paired-run scenarios for each base seed of `config`.
///
/// Returns the same summary the command line writes to `train-compare.json`,
/// plus the per-seed training CSVs.
#[pyfunction]
#[pyo3(signature = (config = None, seeds = None))]
fn train_compare<'py>(py: Python<'py>, config: Option<&str>, seeds: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = load_config(config)?;
    if let Some(n) = seeds {
        cfg.train.seeds = n;
        cfg.validate().map_err(|e| py_err(e.into()))?;
    }
    let runs: Vec<_> = cfg.train_seed_list().iter().map(|&s| cfg.train_config(s)).collect();
    let suites = py
        .detach(|| runs.iter().map(numdev::run_scenario_suite).collect::<Result<Vec<_>, _>>())
        .map_err(py_err)?;
    let hash = hex(&cfg.hash());
    let toml = cfg.to_toml();
    let csvs: Vec<String> = suites
        .iter()
        .map(|s| report::training_csv_string(&s.series, &hash))
        .collect();
    let finals: Vec<(&str, Vec<f64>)> = Scenario::ALL
        .iter()
        .map(|&sc| {
            let f = suites
                .iter()
                .filter_map(|s| s.get(sc).last().map(|d| d.wasserstein))
                .collect();
            (sc.name(), f)
        })
        .collect();
    from_json(
        py,
        &serde_json::json!({
            "summary": report::training_summary(&suites, &hash, &toml),
            "final_wasserstein": finals.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
            "csv": csvs,
        }),
    )
}

/// Runs the built-in oracle checks; returns `(name, passed, detail)` tuples.
#[pyfunction]
fn validate(py: Python<'_>) -> Vec<(&'static str, bool, String)> {
    py.detach(numdev::validate::run_all)
        .into_iter()
        .map(|r| (r.name, r.passed, r.detail))
        .collect()
}

#[pymodule]
#[pyo3(name = "numdev")]
fn numdev_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds every class, constant and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFloatFormat>()?;
    m.add_class::<PyMatrix>()?;
    m.add_class::<PySweepResult>()?;
    for (name, fmt) in ["BF16", "FP16", "FP32", "FP64"].iter().zip(numdev::FloatFormat::PRESETS) {
        m.add(*name, PyFloatFormat(fmt))?;
    }
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_list, m)?)?;
    m.add_function(wrap_pyfunction!(ulp, m)?)?;
    m.add_function(wrap_pyfunction!(matmul, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_attention, m)?)?;
    m.add_function(wrap_pyfunction!(flash_attention, m)?)?;
    m.add_function(wrap_pyfunction!(max_difference, m)?)?;
    m.add_function(wrap_pyfunction!(diff_stats, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein_1d, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(train_run, m)?)?;
    m.add_function(wrap_pyfunction!(train_compare, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
