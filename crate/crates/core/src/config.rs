//! Experiment configuration files.
//!
//! Configs are TOML documents. Every key is optional; omitted keys take the
//! defaults shown by `numdev <command> --print-config`.
//!
//! ```toml
//! seeds = 10
//! format = "bf16"
//!
//! [attention]
//! seq_len = 512
//! head_dim = 64
//! sram_elems = 16384   # 0 means use block_rows x block_cols as given
//!
//! [train]
//! steps = 2000
//! checkpoint_every = 100
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{AttentionConfig, Perturbation, Variant};
use crate::linalg::InputDistribution;
use crate::numerics::FloatFormat;
use crate::sweeps::{Axis, AxisValue, SweepSpec};
use crate::trainer::{TaskSpec, TrainRunConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown key `{key}`")]
    UnknownKey { key: String },

    #[error("invalid value at line {line}, column {column}: {message}")]
    InvalidValue {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("value out of range: {message}")]
    OutOfRange { message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    SweepPrecision,
    SweepSeqlen,
    SweepBlocks,
    TrainCompare,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SweepPrecision => "sweep-precision",
            Command::SweepSeqlen => "sweep-seqlen",
            Command::SweepBlocks => "sweep-blocks",
            Command::TrainCompare => "train-compare",
            Command::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockPerturbation {
    #[default]
    None,
    SwapDims,
    SquareOfEqualArea,
}

impl BlockPerturbation {
    pub fn to_perturbation(self) -> Option<Perturbation> {
        match self {
            BlockPerturbation::None => None,
            BlockPerturbation::SwapDims => Some(Perturbation::SwapDims),
            BlockPerturbation::SquareOfEqualArea => Some(Perturbation::SquareOfEqualArea),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionSection {
    pub seq_len: usize,
    pub head_dim: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub sram_elems: usize,
    pub accumulate_in_carrier: bool,
    pub distribution: InputDistribution,
}

impl Default for AttentionSection {
    fn default() -> Self {
        let a = AttentionConfig::default();
        AttentionSection {
            seq_len: a.seq_len,
            head_dim: a.head_dim,
            block_rows: a.block_rows,
            block_cols: a.block_cols,
            sram_elems: a.sram_elems.unwrap_or(0),
            accumulate_in_carrier: a.accumulate_in_carrier,
            distribution: InputDistribution::StandardNormal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub precision_formats: Vec<FloatFormat>,
    pub seq_lens: Vec<usize>,
    pub block_areas: Vec<usize>,
    /// Tile budget for the block sweep's base tile.
    pub block_sram_elems: usize,
    pub block_formats: Vec<FloatFormat>,
    pub perturbation: BlockPerturbation,
}

fn counts(values: &[AxisValue]) -> Vec<usize> {
    values
        .iter()
        .filter_map(|v| match v {
            AxisValue::Count(n) => Some(*n),
            AxisValue::Format(_) => None,
        })
        .collect()
}

impl Default for SweepSection {
    fn default() -> Self {
        let block = SweepSpec::block_default();
        SweepSection {
            precision_formats: FloatFormat::PRESETS.to_vec(),
            seq_lens: counts(&SweepSpec::seqlen_default().values),
            block_areas: counts(&block.values),
            block_sram_elems: block.base.sram_elems.unwrap_or(0),
            block_formats: block.formats,
            perturbation: BlockPerturbation::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seeds: usize,
    pub steps: usize,
    pub checkpoint_every: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
    pub block_rows: usize,
    pub block_cols: usize,
    pub accumulate_in_carrier: bool,
    /// Write every run's checkpoints under `<out_dir>/checkpoints`.
    pub save_checkpoints: bool,
    pub task: TaskSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainRunConfig::default();
        TrainSection {
            seeds: 5,
            steps: t.steps,
            checkpoint_every: t.checkpoint_every,
            learning_rate: t.learning_rate,
            init_scale: t.init_scale,
            block_rows: t.block_rows,
            block_cols: t.block_cols,
            accumulate_in_carrier: t.accumulate_in_carrier,
            save_checkpoints: false,
            task: t.task,
        }
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Seeds per sweep point.
    pub seeds: usize,
    /// First seed; sweeps use `seed_offset .. seed_offset + seeds`.
    pub seed_offset: u64,
    /// Working format for the sequence-length sweep and the training scenarios.
    pub format: FloatFormat,
    /// Output directory; empty means the CLI default.
    pub out_dir: String,
    pub attention: AttentionSection,
    pub sweep: SweepSection,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: Command::default(),
            seeds: 10,
            seed_offset: 0,
            format: FloatFormat::BF16,
            out_dir: String::new(),
            attention: AttentionSection::default(),
            sweep: SweepSection::default(),
            train: TrainSection::default(),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Dotted paths of keys in `doc` that `known` lacks. Tables of arrays are
/// not used by the schema, so arrays are treated as leaves.
fn unknown_keys(doc: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in doc {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (value, known.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(sub), Some(toml::Value::Table(k))) => {
                unknown_keys(sub, k, &path, out)
            }
            _ => {}
        }
    }
}

fn schema() -> toml::Table {
    toml::Table::try_from(ExperimentConfig::default()).expect("default config serializes")
}

/// Parses and validates a config document. Omitted keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = line_column(text, e.span().map_or(0, |s| s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let mut unknown = Vec::new();
    unknown_keys(&doc, &schema(), "", &mut unknown);
    if let Some(key) = unknown.into_iter().next() {
        return Err(ConfigError::UnknownKey { key });
    }
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = line_column(text, e.span().map_or(0, |s| s.start));
        ConfigError::InvalidValue {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_of_range(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::OutOfRange {
        message: e.to_string(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds == 0 {
            return Err(out_of_range("seeds must be at least 1"));
        }
        if self.train.seeds == 0 {
            return Err(out_of_range("train.seeds must be at least 1"));
        }
        if self.seed_offset.checked_add(self.seeds.max(self.train.seeds) as u64).is_none() {
            return Err(out_of_range("seed_offset + seeds overflows"));
        }
        let a = self.attention_config();
        a.validate()
            .and_then(|_| a.geometry().map(|_| ()))
            .map_err(|e| out_of_range(format!("attention: {e}")))?;
        for axis in [Axis::Precision, Axis::SeqLen, Axis::BlockArea] {
            self.sweep_spec(axis)
                .validate()
                .map_err(|e| out_of_range(format!("sweep ({}): {e}", axis.name())))?;
        }
        self.train_config(self.seed_offset)
            .validate()
            .map_err(|e| out_of_range(format!("train: {e}")))?;
        Ok(())
    }

    /// The resolved form, as printed by `--print-config`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved config, excluding `out_dir`, as lowercase hex.
    pub fn hash_hex(&self) -> String {
        hex(&self.hash())
    }

    pub fn hash(&self) -> [u8; 32] {
        let hashed = ExperimentConfig {
            out_dir: String::new(),
            ..self.clone()
        };
        Sha256::digest(hashed.to_toml().as_bytes()).into()
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed_offset + i).collect()
    }

    pub fn train_seed_list(&self) -> Vec<u64> {
        (0..self.train.seeds as u64).map(|i| self.seed_offset + i).collect()
    }

    pub fn attention_config(&self) -> AttentionConfig {
        let a = &self.attention;
        AttentionConfig {
            seq_len: a.seq_len,
            head_dim: a.head_dim,
            format: self.format,
            variant: Variant::Baseline,
            block_rows: a.block_rows,
            block_cols: a.block_cols,
            sram_elems: (a.sram_elems > 0).then_some(a.sram_elems),
            accumulate_in_carrier: a.accumulate_in_carrier,
        }
    }

    pub fn sweep_spec(&self, axis: Axis) -> SweepSpec {
        let s = &self.sweep;
        let mut base = self.attention_config();
        let (values, perturbation) = match axis {
            Axis::Precision => (
                s.precision_formats.iter().map(|&f| AxisValue::Format(f)).collect(),
                None,
            ),
            Axis::SeqLen => (s.seq_lens.iter().map(|&n| AxisValue::Count(n)).collect(), None),
            Axis::BlockArea => {
                base.sram_elems = (s.block_sram_elems > 0).then_some(s.block_sram_elems);
                (
                    s.block_areas.iter().map(|&n| AxisValue::Count(n)).collect(),
                    s.perturbation.to_perturbation(),
                )
            }
        };
        SweepSpec {
            axis,
            values,
            base,
            seeds: self.seed_list(),
            perturbation,
            distribution: self.attention.distribution,
            formats: s.block_formats.clone(),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainRunConfig {
        let t = &self.train;
        TrainRunConfig {
            seed,
            attention_variant: Variant::Baseline,
            train_format: self.format,
            steps: t.steps,
            learning_rate: t.learning_rate,
            checkpoint_every: t.checkpoint_every,
            init_scale: t.init_scale,
            block_rows: t.block_rows,
            block_cols: t.block_cols,
            accumulate_in_carrier: t.accumulate_in_carrier,
            task: t.task.clone(),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn format_presets_and_explicit_widths() {
        let a = parse_config("format = \"bf16\"").unwrap();
        let b = parse_config("format = \"e8m7\"").unwrap();
        assert_eq!(a.format, FloatFormat::BF16);
        assert_eq!(b.format, FloatFormat::BF16);
        assert_eq!(a, b);
    }

    #[test]
    fn print_config_roundtrips() {
        let cfg = parse_config("seeds = 3\n[train]\nsteps = 400\n").unwrap();
        let again = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn hash_ignores_out_dir() {
        let a = parse_config("out_dir = \"a\"").unwrap();
        let b = parse_config("out_dir = \"b\"").unwrap();
        assert_eq!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 64);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("seeds = 3\n[attention\nseq_len = 4\n").unwrap_err();
        match err {
            ConfigError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_classes_are_distinct() {
        assert_eq!(
            parse_config("[attention]\nseq_length = 4").unwrap_err(),
            ConfigError::UnknownKey {
                key: "attention.seq_length".into()
            }
        );
        assert!(matches!(
            parse_config("[train.task]\nwords = 3").unwrap_err(),
            ConfigError::UnknownKey { .. }
        ));
        assert!(matches!(
            parse_config("format = \"bf17\"").unwrap_err(),
            ConfigError::InvalidValue { line: 1, .. }
        ));
        assert!(matches!(
            parse_config("seeds = 0").unwrap_err(),
            ConfigError::OutOfRange { .. }
        ));
        assert!(matches!(
            parse_config("[train]\nsteps = 10\ncheckpoint_every = 3").unwrap_err(),
            ConfigError::OutOfRange { .. }
        ));
        assert!(matches!(
            parse_config("[sweep]\nseq_lens = [128, 64]").unwrap_err(),
            ConfigError::OutOfRange { .. }
        ));
    }

    #[test]
    fn resolved_views() {
        let cfg = parse_config("seeds = 2\nseed_offset = 5\nformat = \"fp16\"").unwrap();
        assert_eq!(cfg.seed_list(), vec![5, 6]);
        let spec = cfg.sweep_spec(Axis::SeqLen);
        assert_eq!(spec.base.format, FloatFormat::FP16);
        assert_eq!(spec.seeds, vec![5, 6]);
        let block = cfg.sweep_spec(Axis::BlockArea);
        assert_eq!(block.base.sram_elems, Some(65536));
        assert_eq!(cfg.train_config(5).train_format, FloatFormat::FP16);
    }
}
