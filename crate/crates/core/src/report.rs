//! CSV and JSON artifacts.
//!
//! CSV files start with a `# resolved-config-sha256: <hex>` comment line,
//! followed by the header row and data rows. Floats use Rust's shortest
//! round-trip rendering, so identical results always produce identical bytes.

use std::io::{self, Write};

use serde::Serialize;

use crate::metrics::median;
use crate::sweeps::{PointSummary, SweepResult};
use crate::trainer::{CheckpointDelta, DivergenceEvent, Scenario, ScenarioSuite};

pub const SWEEP_HEADER: &str =
    "axis,value,seed,variant,format,Br,Bc,max_abs_diff,mean_diff,std_diff,vs";
pub const TRAINING_HEADER: &str = "scenario,step,max_difference,wasserstein,tensor";

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn hash_line(w: &mut impl Write, config_hash: &str) -> io::Result<()> {
    writeln!(w, "# resolved-config-sha256: {config_hash}")
}

pub fn write_sweep_csv(w: &mut impl Write, result: &SweepResult, config_hash: &str) -> io::Result<()> {
    hash_line(w, config_hash)?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for row in &result.rows {
        let (br, bc) = row
            .geometry
            .map(|g| (g.block_rows.to_string(), g.block_cols.to_string()))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.axis.name(),
            row.value,
            row.seed,
            row.variant,
            row.format,
            br,
            bc,
            fmt_f64(row.report.max_abs_diff),
            fmt_f64(row.report.mean_diff),
            fmt_f64(row.report.std_diff),
            row.vs.name()
        )?;
    }
    Ok(())
}

/// One `aggregate` row per checkpoint followed by one row per tensor; tensor
/// rows leave `max_difference` empty.
pub fn write_training_csv(
    w: &mut impl Write,
    series: &[(Scenario, Vec<CheckpointDelta>)],
    config_hash: &str,
) -> io::Result<()> {
    hash_line(w, config_hash)?;
    writeln!(w, "{TRAINING_HEADER}")?;
    for (scenario, deltas) in series {
        for d in deltas {
            writeln!(
                w,
                "{},{},{},{},aggregate",
                scenario.name(),
                d.step,
                fmt_f64(d.max_difference),
                fmt_f64(d.wasserstein)
            )?;
            for (name, wd) in &d.per_tensor {
                writeln!(w, "{},{},,{},{}", scenario.name(), d.step, fmt_f64(*wd), name)?;
            }
        }
    }
    Ok(())
}

pub fn sweep_csv_string(result: &SweepResult, config_hash: &str) -> String {
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, result, config_hash).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV is ASCII")
}

pub fn training_csv_string(series: &[(Scenario, Vec<CheckpointDelta>)], config_hash: &str) -> String {
    let mut buf = Vec::new();
    write_training_csv(&mut buf, series, config_hash).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV is ASCII")
}

#[derive(Debug, Serialize)]
pub struct SweepSummary<'a> {
    pub config_sha256: &'a str,
    pub config: &'a str,
    pub axis: &'static str,
    pub points: Vec<PointSummary>,
}

pub fn sweep_summary<'a>(result: &SweepResult, config_hash: &'a str, config: &'a str) -> SweepSummary<'a> {
    SweepSummary {
        config_sha256: config_hash,
        config,
        axis: result.spec.axis.name(),
        points: result.summary(),
    }
}

#[derive(Debug, Serialize)]
pub struct ScenarioSummary {
    pub scenario: &'static str,
    pub steps: Vec<usize>,
    /// Median over base seeds of the aggregate Wasserstein at each checkpoint.
    pub median_wasserstein: Vec<f64>,
    pub median_max_difference: Vec<f64>,
    /// Median over base seeds of each curve divided by its final value.
    pub median_normalized_by_final: Vec<f64>,
    pub final_wasserstein: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrainingSummary<'a> {
    pub config_sha256: &'a str,
    pub config: &'a str,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<ScenarioSummary>,
    pub divergence_events: Vec<(u64, String, DivergenceEvent)>,
}

fn column_medians(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| median(&curves.iter().map(|c| c[i]).collect::<Vec<_>>()))
        .collect()
}

pub fn training_summary<'a>(
    suites: &[ScenarioSuite],
    config_hash: &'a str,
    config: &'a str,
) -> TrainingSummary<'a> {
    let scenarios = Scenario::ALL
        .iter()
        .map(|&s| {
            let series: Vec<&[CheckpointDelta]> = suites.iter().map(|x| x.get(s)).collect();
            let w: Vec<Vec<f64>> = series
                .iter()
                .map(|d| d.iter().map(|c| c.wasserstein).collect())
                .collect();
            let m: Vec<Vec<f64>> = series
                .iter()
                .map(|d| d.iter().map(|c| c.max_difference).collect())
                .collect();
            let normalized: Vec<Vec<f64>> = w
                .iter()
                .map(|c| {
                    let last = c.last().copied().unwrap_or(f64::NAN);
                    c.iter().map(|x| x / last).collect()
                })
                .collect();
            ScenarioSummary {
                scenario: s.name(),
                steps: series
                    .first()
                    .map(|d| d.iter().map(|c| c.step).collect())
                    .unwrap_or_default(),
                median_wasserstein: column_medians(&w),
                median_max_difference: column_medians(&m),
                median_normalized_by_final: column_medians(&normalized),
                final_wasserstein: w.iter().filter_map(|c| c.last().copied()).collect(),
            }
        })
        .collect();
    let divergence_events = suites
        .iter()
        .flat_map(|s| {
            s.divergence_events
                .iter()
                .map(|(run, ev)| (s.base.seed, run.clone(), ev.clone()))
        })
        .collect();
    TrainingSummary {
        config_sha256: config_hash,
        config,
        seeds: suites.iter().map(|s| s.base.seed).collect(),
        scenarios,
        divergence_events,
    }
}
