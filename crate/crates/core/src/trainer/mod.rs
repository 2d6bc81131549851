//! Toy training harness with manual gradients and paired-run weight distances.

pub mod checkpoint;
mod model;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use model::{
    backward, forward_loss, sgd_step, Activations, Example, Gradients, KernelChoice, TaskSpec,
    ToyModel, TENSOR_NAMES,
};

use crate::attention::{BlockGeometry, Variant};
use crate::error::{Error, Result};
use crate::metrics::{max_abs_difference, weighted_wasserstein};
use crate::numerics::{Arithmetic, FloatFormat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub seed: u64,
    pub attention_variant: Variant,
    pub train_format: FloatFormat,
    pub steps: usize,
    pub learning_rate: f64,
    pub checkpoint_every: usize,
    pub init_scale: f64,
    pub block_rows: usize,
    pub block_cols: usize,
    pub accumulate_in_carrier: bool,
    pub task: TaskSpec,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            seed: 0,
            attention_variant: Variant::Baseline,
            train_format: FloatFormat::BF16,
            steps: 2000,
            learning_rate: 0.05,
            checkpoint_every: 100,
            init_scale: 0.5,
            block_rows: 4,
            block_cols: 4,
            accumulate_in_carrier: false,
            task: TaskSpec::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.checkpoint_every == 0 || !self.steps.is_multiple_of(self.checkpoint_every) {
            return Err(Error::invalid(format!(
                "checkpoint_every ({}) must divide steps ({})",
                self.checkpoint_every, self.steps
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive and finite"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be positive and finite"));
        }
        BlockGeometry::new(self.block_rows, self.block_cols)?;
        self.task.validate()
    }

    pub fn arithmetic(&self) -> Arithmetic {
        Arithmetic {
            format: self.train_format,
            accumulate_in_carrier: self.accumulate_in_carrier,
        }
    }

    pub fn kernel(&self) -> Result<KernelChoice> {
        Ok(KernelChoice {
            variant: self.attention_variant,
            geometry: BlockGeometry::new(self.block_rows, self.block_cols)?,
            arith: self.arithmetic(),
        })
    }

    /// Steps at which snapshots are taken, starting with 0.
    pub fn schedule(&self) -> Vec<usize> {
        (0..=self.steps / self.checkpoint_every.max(1))
            .map(|i| i * self.checkpoint_every)
            .collect()
    }
}

/// Parameters at one point of a run, with the full-dataset loss at that point.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub model: ToyModel,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceEvent {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: TrainRunConfig,
    pub checkpoints: Vec<Checkpoint>,
    /// Batch loss before each update.
    pub losses: Vec<f64>,
    pub divergence_events: Vec<DivergenceEvent>,
}

impl TrainRun {
    pub fn diverged(&self) -> bool {
        !self.divergence_events.is_empty()
    }
}

fn dataset_loss(model: &ToyModel, data: &[Example], kernel: KernelChoice) -> Result<f64> {
    Ok(forward_loss(model, data, kernel)?.0)
}

/// Plain SGD for `cfg.steps`, snapshotting at step 0 and every `checkpoint_every` steps.
///
/// A non-finite batch loss is recorded as a divergence event and training
/// carries on with whatever parameters result.
pub fn train_run(cfg: &TrainRunConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let arith = kernel.arith;
    let data = cfg.task.dataset();
    let mut model = ToyModel::init(&cfg.task, cfg.seed, cfg.init_scale, cfg.train_format)?;
    let mut checkpoints = Vec::with_capacity(cfg.steps / cfg.checkpoint_every + 1);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut divergence_events = Vec::new();

    checkpoints.push(Checkpoint {
        step: 0,
        loss: dataset_loss(&model, &data, kernel)?,
        model: model.clone(),
    });
    for step in 0..cfg.steps {
        let batch = cfg.task.batch(&data, step);
        let (loss, acts) = forward_loss(&model, batch, kernel)?;
        if !loss.is_finite() {
            divergence_events.push(DivergenceEvent { step, loss });
        }
        losses.push(loss);
        let grads = backward(&model, &acts, arith)?;
        sgd_step(&mut model, &grads, cfg.learning_rate, arith);
        let done = step + 1;
        if done % cfg.checkpoint_every == 0 {
            checkpoints.push(Checkpoint {
                step: done,
                loss: dataset_loss(&model, &data, kernel)?,
                model: model.clone(),
            });
        }
    }
    Ok(TrainRun {
        config: cfg.clone(),
        checkpoints,
        losses,
        divergence_events,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointDelta {
    pub step: usize,
    pub max_difference: f64,
    pub wasserstein: f64,
    pub per_tensor: Vec<(String, f64)>,
}

fn compare_models(step: usize, a: &ToyModel, b: &ToyModel) -> Result<CheckpointDelta> {
    let ta = a.tensors();
    let tb = b.tensors();
    for ((name, x), (_, y)) in ta.iter().zip(&tb) {
        if x.shape() != y.shape() {
            return Err(Error::invalid(format!(
                "tensor {name} shape {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
    }
    if !a.is_finite() || !b.is_finite() {
        let per_tensor = TENSOR_NAMES.iter().map(|n| (n.to_string(), f64::NAN)).collect();
        return Ok(CheckpointDelta {
            step,
            max_difference: f64::NAN,
            wasserstein: f64::NAN,
            per_tensor,
        });
    }
    let mut max_difference = 0.0f64;
    for ((_, x), (_, y)) in ta.iter().zip(&tb) {
        max_difference = max_difference.max(max_abs_difference(x.as_slice(), y.as_slice())?);
    }
    let (wasserstein, per_tensor) = weighted_wasserstein(
        ta.iter()
            .zip(&tb)
            .map(|((name, x), (_, y))| (*name, x.as_slice(), y.as_slice())),
    )?;
    Ok(CheckpointDelta {
        step,
        max_difference,
        wasserstein,
        per_tensor,
    })
}

/// Per-checkpoint distances between two runs with the same schedule.
///
/// Checkpoints where either model has non-finite parameters yield NaN distances.
pub fn compare_runs(a: &[Checkpoint], b: &[Checkpoint]) -> Result<Vec<CheckpointDelta>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.step != y.step) {
        return Err(Error::invalid("checkpoint schedules differ"));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| compare_models(x.step, &x.model, &y.model))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    FlashVsBaseline,
    DifferentInit,
    Fp16VsFp32,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::FlashVsBaseline,
        Scenario::DifferentInit,
        Scenario::Fp16VsFp32,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FlashVsBaseline => "flash-vs-baseline",
            Scenario::DifferentInit => "different-init",
            Scenario::Fp16VsFp32 => "fp16-vs-fp32",
        }
    }
}

/// Seed of the second run in the different-init scenario.
pub fn alternate_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

#[derive(Clone, Debug)]
pub struct ScenarioSuite {
    pub base: TrainRunConfig,
    pub series: Vec<(Scenario, Vec<CheckpointDelta>)>,
    pub divergence_events: Vec<(String, DivergenceEvent)>,
    /// The five underlying runs, by name.
    pub runs: Vec<(&'static str, TrainRun)>,
}

impl ScenarioSuite {
    pub fn get(&self, scenario: Scenario) -> &[CheckpointDelta] {
        self.series
            .iter()
            .find(|(s, _)| *s == scenario)
            .map(|(_, d)| d.as_slice())
            .unwrap_or(&[])
    }
}

/// Runs the three paired comparisons: flash vs baseline at the base format,
/// baseline with a different seed, and baseline FP16 vs FP32.
pub fn run_scenario_suite(base: &TrainRunConfig) -> Result<ScenarioSuite> {
    base.validate()?;
    let baseline = TrainRunConfig {
        attention_variant: Variant::Baseline,
        ..base.clone()
    };
    let runs = [
        ("baseline", baseline.clone()),
        (
            "flash",
            TrainRunConfig {
                attention_variant: Variant::Flash,
                ..baseline.clone()
            },
        ),
        (
            "baseline-alt-seed",
            TrainRunConfig {
                seed: alternate_seed(base.seed),
                ..baseline.clone()
            },
        ),
        (
            "baseline-fp16",
            TrainRunConfig {
                train_format: FloatFormat::FP16,
                ..baseline.clone()
            },
        ),
        (
            "baseline-fp32",
            TrainRunConfig {
                train_format: FloatFormat::FP32,
                ..baseline
            },
        ),
    ];
    let results: Vec<TrainRun> = runs
        .par_iter()
        .map(|(name, cfg)| train_run(cfg).map_err(|e| e.context(format!("run {name}"))))
        .collect::<Result<_>>()?;
    let ck = |i: usize| results[i].checkpoints.as_slice();
    let series = vec![
        (Scenario::FlashVsBaseline, compare_runs(ck(1), ck(0))?),
        (Scenario::DifferentInit, compare_runs(ck(0), ck(2))?),
        (Scenario::Fp16VsFp32, compare_runs(ck(3), ck(4))?),
    ];
    let divergence_events = runs
        .iter()
        .zip(&results)
        .flat_map(|((name, _), run)| {
            run.divergence_events
                .iter()
                .map(move |ev| (name.to_string(), ev.clone()))
        })
        .collect();
    Ok(ScenarioSuite {
        base: base.clone(),
        series,
        divergence_events,
        runs: runs.iter().map(|(name, _)| *name).zip(results).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> TrainRunConfig {
        TrainRunConfig {
            seed,
            steps: 40,
            checkpoint_every: 10,
            ..TrainRunConfig::default()
        }
    }

    #[test]
    fn validation() {
        assert!(TrainRunConfig::default().validate().is_ok());
        for bad in [
            TrainRunConfig { steps: 0, ..short(0) },
            TrainRunConfig { checkpoint_every: 7, ..short(0) },
            TrainRunConfig { checkpoint_every: 0, ..short(0) },
            TrainRunConfig { learning_rate: 0.0, ..short(0) },
            TrainRunConfig { learning_rate: f64::NAN, ..short(0) },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))), "{bad:?}");
        }
    }

    #[test]
    fn single_step_has_two_snapshots() {
        let cfg = TrainRunConfig {
            steps: 1,
            checkpoint_every: 1,
            ..short(3)
        };
        let run = train_run(&cfg).unwrap();
        let steps: Vec<usize> = run.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![0, 1]);
        assert_eq!(run.losses.len(), 1);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = train_run(&short(5)).unwrap();
        let b = train_run(&short(5)).unwrap();
        assert_eq!(a.checkpoints, b.checkpoints);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn compare_identical_and_symmetric() {
        let a = train_run(&short(1)).unwrap();
        let b = train_run(&TrainRunConfig { seed: 2, ..short(1) }).unwrap();
        for d in compare_runs(&a.checkpoints, &a.checkpoints).unwrap() {
            assert_eq!(d.max_difference, 0.0);
            assert_eq!(d.wasserstein, 0.0);
        }
        let ab = compare_runs(&a.checkpoints, &b.checkpoints).unwrap();
        let ba = compare_runs(&b.checkpoints, &a.checkpoints).unwrap();
        assert_eq!(ab, ba);
        assert!(ab[0].wasserstein > 0.0);
    }

    #[test]
    fn schedule_mismatch_rejected() {
        let a = train_run(&short(1)).unwrap();
        let b = train_run(&TrainRunConfig { checkpoint_every: 20, ..short(1) }).unwrap();
        assert!(matches!(
            compare_runs(&a.checkpoints, &b.checkpoints),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn flash_matches_baseline_at_init() {
        let base = TrainRunConfig {
            steps: 20,
            checkpoint_every: 10,
            ..TrainRunConfig::default()
        };
        let suite = run_scenario_suite(&base).unwrap();
        let fb = suite.get(Scenario::FlashVsBaseline);
        assert_eq!(fb[0].wasserstein, 0.0);
        assert!(suite.get(Scenario::DifferentInit)[0].wasserstein > 0.0);
        assert_eq!(suite.series.len(), 3);
    }
}
