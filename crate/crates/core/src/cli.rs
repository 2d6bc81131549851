//! The `numdev` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, Command, ExperimentConfig};
use crate::error::{Error, Result};
use crate::report;
use crate::sweeps::{run_sweep, Axis};
use crate::trainer::{checkpoint, run_scenario_suite, ScenarioSuite};
use crate::validate;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "NUMDEV_OUT";
pub const DEFAULT_OUT: &str = "numdev-out";

#[derive(Debug, Parser)]
#[command(name = "numdev", version, about = "Numeric deviation lab for attention kernels")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment config; omitted keys take their defaults
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory (default: config `out_dir`, then $NUMDEV_OUT, then ./numdev-out)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Number of seeds (sweep points, or base seeds for train-compare)
    #[arg(long, global = true, value_name = "N")]
    pub seeds: Option<usize>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Print the resolved config and exit
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Flash and baseline against the FP64 golden output across formats
    SweepPrecision,
    /// Flash against baseline across sequence lengths, fixed tile shape
    SweepSeqlen,
    /// Flash against golden across tile areas, optionally perturbed
    SweepBlocks,
    /// Paired toy training runs: flash vs baseline, different init, FP16 vs FP32
    TrainCompare,
    /// Run the built-in oracle checks
    Validate {
        /// List the checks without running them
        #[arg(long)]
        list: bool,
    },
}

impl CliCommand {
    fn command(&self) -> Command {
        match self {
            CliCommand::SweepPrecision => Command::SweepPrecision,
            CliCommand::SweepSeqlen => Command::SweepSeqlen,
            CliCommand::SweepBlocks => Command::SweepBlocks,
            CliCommand::TrainCompare => Command::TrainCompare,
            CliCommand::Validate { .. } => Command::Validate,
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text).map_err(|e| Error::from(e).context(p.display().to_string()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

/// Loads the config and applies command-line overrides.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = read_config(cli.global.config.as_deref())?;
    cfg.command = cli.command.command();
    if let Some(n) = cli.global.seeds {
        match cfg.command {
            Command::TrainCompare => cfg.train.seeds = n,
            _ => cfg.seeds = n,
        }
    }
    if let Some(out) = &cli.global.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    if !cfg.out_dir.is_empty() {
        return PathBuf::from(&cfg.out_dir);
    }
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("summary serializes");
    s.push(b'\n');
    s
}

fn run_sweep_command(cfg: &ExperimentConfig, axis: Axis, out: &Path, stdout: &mut impl Write) -> Result<()> {
    let result = run_sweep(&cfg.sweep_spec(axis))?;
    let hash = cfg.hash_hex();
    let toml = cfg.to_toml();
    let stem = cfg.command.name();
    write_file(&out.join(format!("{stem}.csv")), report::sweep_csv_string(&result, &hash).as_bytes())?;
    write_file(
        &out.join(format!("{stem}.json")),
        &json(&report::sweep_summary(&result, &hash, &toml)),
    )?;
    let io = |e| Error::io("<stdout>", e);
    writeln!(stdout, "{:>10} {:>9} {:>6} {:>7} {:>11} {:>11}", axis.name(), "variant", "format", "vs", "median", "iqr").map_err(io)?;
    for p in result.summary() {
        writeln!(
            stdout,
            "{:>10} {:>9} {:>6} {:>7} {:>11.3e} {:>11.3e}",
            p.value.to_string(),
            p.variant.name(),
            p.format.to_string(),
            p.vs.name(),
            p.max_abs_diff.median,
            p.max_abs_diff.iqr()
        )
        .map_err(io)?;
    }
    Ok(())
}

fn save_checkpoints(suite: &ScenarioSuite, out: &Path, hash: &[u8; 32]) -> Result<()> {
    for (name, run) in &suite.runs {
        let dir = out
            .join("checkpoints")
            .join(format!("seed{}", suite.base.seed))
            .join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for ck in &run.checkpoints {
            checkpoint::write(&dir.join(format!("step{:06}.ckpt", ck.step)), ck, hash)?;
        }
    }
    Ok(())
}

fn run_train_command(cfg: &ExperimentConfig, out: &Path, stdout: &mut impl Write) -> Result<()> {
    let hash = cfg.hash_hex();
    let toml = cfg.to_toml();
    let mut suites = Vec::new();
    for seed in cfg.train_seed_list() {
        let suite = run_scenario_suite(&cfg.train_config(seed))
            .map_err(|e| e.context(format!("base seed {seed}")))?;
        write_file(
            &out.join(format!("train-compare-seed{seed}.csv")),
            report::training_csv_string(&suite.series, &hash).as_bytes(),
        )?;
        if cfg.train.save_checkpoints {
            save_checkpoints(&suite, out, &cfg.hash())?;
        }
        suites.push(suite);
    }
    let summary = report::training_summary(&suites, &hash, &toml);
    write_file(&out.join("train-compare.json"), &json(&summary))?;
    let io = |e| Error::io("<stdout>", e);
    for s in &summary.scenarios {
        let last = s.median_wasserstein.last().copied().unwrap_or(f64::NAN);
        writeln!(stdout, "{:>18}: final median wasserstein {last:.4e}", s.scenario).map_err(io)?;
    }
    for (seed, run, ev) in &summary.divergence_events {
        writeln!(stdout, "divergence: seed {seed} run {run} step {} loss {}", ev.step, ev.loss).map_err(io)?;
    }
    Ok(())
}

/// Runs the validation suite; returns whether every check passed.
fn run_validate(list: bool, stdout: &mut impl Write) -> Result<bool> {
    let io = |e| Error::io("<stdout>", e);
    if list {
        for name in validate::CHECKS {
            writeln!(stdout, "{name}").map_err(io)?;
        }
        return Ok(true);
    }
    let results = validate::run_all();
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        writeln!(stdout, "{status} {}: {}", r.name, r.detail).map_err(io)?;
    }
    Ok(results.iter().all(|r| r.passed))
}

fn execute(cli: &Cli, stdout: &mut impl Write) -> Result<i32> {
    let cfg = resolve(cli)?;
    if cli.global.print_config {
        stdout
            .write_all(cfg.to_toml().as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?;
        return Ok(0);
    }
    if let CliCommand::Validate { list } = cli.command {
        return Ok(if run_validate(list, stdout)? { 0 } else { 3 });
    }
    let out = out_dir(&cfg);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("resolved-config.toml"), cfg.to_toml().as_bytes())?;
    match cfg.command {
        Command::SweepPrecision => run_sweep_command(&cfg, Axis::Precision, &out, stdout)?,
        Command::SweepSeqlen => run_sweep_command(&cfg, Axis::SeqLen, &out, stdout)?,
        Command::SweepBlocks => run_sweep_command(&cfg, Axis::BlockArea, &out, stdout)?,
        Command::TrainCompare => run_train_command(&cfg, &out, stdout)?,
        Command::Validate => unreachable!("handled above"),
    }
    Ok(0)
}

fn execute_with_threads(cli: &Cli, stdout: &mut (impl Write + Send)) -> Result<i32> {
    match cli.global.threads {
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| execute(cli, stdout))
        }
        None => execute(cli, stdout),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout();
    match execute_with_threads(&cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
