//! Command-line surface and the serializable run configuration it parses to.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use motifcut::dp::TuningConstants;
use motifcut::eval::CutMode;
use motifcut::generate::GraphModel;
use serde::{Deserialize, Serialize};

use crate::CliError;

// =============================================================================
// Run configuration
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Gen,
    Run,
    Baseline,
    Eval,
    Verify,
}

/// How released graphs are scored against the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CutChoice {
    /// Exhaustive up to 16 vertices, sampled beyond.
    Auto,
    None,
    Exhaustive,
    Sampled { samples: u64 },
}

/// Largest vertex count scored exhaustively under [`CutChoice::Auto`].
const AUTO_EXHAUSTIVE_MAX_N: usize = 16;

impl CutChoice {
    /// Concrete evaluation mode for an `n`-vertex graph; sampled sweeps are
    /// seeded with the run seed.
    pub fn resolve(&self, n: usize, seed: u64) -> Option<CutMode> {
        match *self {
            CutChoice::None => None,
            CutChoice::Exhaustive => Some(CutMode::Exhaustive),
            CutChoice::Sampled { samples } => Some(CutMode::Sampled { samples, seed }),
            CutChoice::Auto if n <= AUTO_EXHAUSTIVE_MAX_N => Some(CutMode::Exhaustive),
            CutChoice::Auto => {
                let available = (1u64 << (n.min(63) - 1)).saturating_sub(1);
                Some(CutMode::Sampled { samples: CutMode::DEFAULT_SAMPLES.min(available), seed })
            }
        }
    }
}

/// Everything a command needs, independent of how it was specified.
/// Round-trips through JSON; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: Option<PathBuf>,
    /// Second graph for `eval`.
    pub compare: Option<PathBuf>,
    /// Graph generated per seed when no input file is given.
    pub model: Option<GraphModel>,
    /// Released graph (or generated graph for `gen`).
    pub output: Option<PathBuf>,
    /// JSON report.
    pub report: Option<PathBuf>,
    /// CSV summary, one row per run.
    pub csv: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub seeds: Vec<u64>,
    pub constants: TuningConstants,
    pub cut_mode: CutChoice,
    /// Also run the randomized-response baseline alongside the mechanism.
    pub baseline: bool,
    pub clip_negative: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::Config(msg.to_string())) };
        need(!self.seeds.is_empty(), "at least one seed is required")?;
        match self.command {
            CommandKind::Gen => {
                need(self.model.is_some(), "gen requires --model")?;
                need(self.output.is_some() || self.seeds.len() == 1, "gen over several seeds requires --output")?;
            }
            CommandKind::Run | CommandKind::Baseline => {
                need(self.input.is_some() != self.model.is_some(), "give exactly one of --input or --model")?;
                need(self.epsilon.is_some(), "--eps is required")?;
                if self.command == CommandKind::Run {
                    need(self.delta.is_some(), "--delta is required")?;
                    need(self.beta.is_some(), "--beta is required")?;
                }
            }
            CommandKind::Eval => {
                need(self.input.is_some() && self.compare.is_some(), "eval requires --input and --compare")?;
                need(self.cut_mode != CutChoice::None, "eval needs a cut mode")?;
            }
            CommandKind::Verify => {}
        }
        if let CutChoice::Sampled { samples: 0 } = self.cut_mode {
            return Err(CliError::Config("sampled cut mode needs at least one sample".into()));
        }
        Ok(())
    }
}

// =============================================================================
// Command line
// =============================================================================

#[derive(Debug, Parser)]
#[command(name = "motifcut", version, about = "Private synthetic graphs preserving triangle-motif cuts")]
pub struct Cli {
    /// Run the configuration stored in this JSON file instead of a subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Print the parsed configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random unit-weight graph.
    Gen(GenArgs),
    /// Run the private mechanism.
    #[command(allow_negative_numbers = true)]
    Run(RunArgs),
    /// Run the randomized-response baseline.
    #[command(allow_negative_numbers = true)]
    Baseline(BaselineArgs),
    /// Maximum triangle-cut difference between two graph files.
    Eval(EvalArgs),
    /// Run the invariant suites of every module.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelKind {
    Gnp,
    Complete,
    Regular,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineKind {
    Rr,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Random graph model.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Edge probability for gnp.
    #[arg(long)]
    pub p: Option<f64>,
    /// Degree for regular.
    #[arg(long)]
    pub d: Option<usize>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<Option<GraphModel>, CliError> {
        let Some(kind) = self.model else {
            if self.n.is_some() || self.p.is_some() || self.d.is_some() {
                return Err(CliError::Config("--n, --p and --d require --model".into()));
            }
            return Ok(None);
        };
        let n = self.n.ok_or_else(|| CliError::Config("--model requires --n".into()))?;
        Ok(Some(match kind {
            ModelKind::Gnp => GraphModel::Gnp {
                n,
                p: self.p.ok_or_else(|| CliError::Config("gnp requires --p".into()))?,
            },
            ModelKind::Complete => GraphModel::Complete { n },
            ModelKind::Regular => GraphModel::Regular {
                n,
                d: self.d.ok_or_else(|| CliError::Config("regular requires --d".into()))?,
            },
        }))
    }
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[arg(long, default_value_t = 0, conflicts_with = "seeds")]
    pub seed: u64,
    /// Seed range `a..b` (exclusive) or `a..=b` (inclusive).
    #[arg(long, value_parser = parse_seed_range)]
    pub seeds: Option<SeedList>,
}

/// Seeds parsed from a range flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl SeedArgs {
    fn resolve(&self) -> Vec<u64> {
        self.seeds.clone().map(|s| s.0).unwrap_or_else(|| vec![self.seed])
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Graph file to write; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Released graph file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON report file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// CSV summary file (one row per run).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// exhaustive, sampled:<k>, auto or none.
    #[arg(long, default_value = "auto", value_parser = parse_cut_mode)]
    pub cut_mode: CutChoice,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input graph file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub beta: f64,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long, default_value_t = 1.0)]
    pub ct: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ceta: f64,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Also run a baseline with the same seeds.
    #[arg(long)]
    pub baseline: Option<BaselineKind>,
    /// Clip negative baseline weights to zero.
    #[arg(long)]
    pub clip_negative: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    #[arg(long)]
    pub clip_negative: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference graph.
    #[arg(long)]
    pub input: PathBuf,
    /// Graph to score; negative weights are accepted.
    #[arg(long)]
    pub compare: PathBuf,
    #[arg(long, default_value = "auto", value_parser = parse_cut_mode)]
    pub cut_mode: CutChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn empty(command: CommandKind) -> RunConfig {
    RunConfig {
        command,
        input: None,
        compare: None,
        model: None,
        output: None,
        report: None,
        csv: None,
        epsilon: None,
        delta: None,
        beta: None,
        seeds: vec![0],
        constants: TuningConstants::default(),
        cut_mode: CutChoice::None,
        baseline: false,
        clip_negative: false,
    }
}

impl Command {
    pub fn into_config(self) -> Result<RunConfig, CliError> {
        Ok(match self {
            Command::Gen(a) => RunConfig {
                model: a.model.resolve()?,
                seeds: a.seeds.resolve(),
                output: a.output,
                ..empty(CommandKind::Gen)
            },
            Command::Run(a) => RunConfig {
                input: a.input,
                model: a.model.resolve()?,
                output: a.out.output,
                report: a.out.report,
                csv: a.out.csv,
                epsilon: Some(a.eps),
                delta: Some(a.delta),
                beta: Some(a.beta),
                seeds: a.seeds.resolve(),
                constants: TuningConstants { c_t: a.ct, c_lambda: a.clambda, c_eta: a.ceta, ..TuningConstants::default() },
                cut_mode: a.out.cut_mode,
                baseline: a.baseline.is_some(),
                clip_negative: a.clip_negative,
                ..empty(CommandKind::Run)
            },
            Command::Baseline(a) => RunConfig {
                input: a.input,
                model: a.model.resolve()?,
                output: a.out.output,
                report: a.out.report,
                csv: a.out.csv,
                epsilon: Some(a.eps),
                seeds: a.seeds.resolve(),
                cut_mode: a.out.cut_mode,
                clip_negative: a.clip_negative,
                ..empty(CommandKind::Baseline)
            },
            Command::Eval(a) => RunConfig {
                input: Some(a.input),
                compare: Some(a.compare),
                seeds: vec![a.seed],
                cut_mode: a.cut_mode,
                report: a.report,
                ..empty(CommandKind::Eval)
            },
            Command::Verify(a) => RunConfig { seeds: vec![a.seed], report: a.report, ..empty(CommandKind::Verify) },
        })
    }
}

pub fn parse_cut_mode(s: &str) -> Result<CutChoice, String> {
    match s {
        "auto" => Ok(CutChoice::Auto),
        "none" => Ok(CutChoice::None),
        "exhaustive" => Ok(CutChoice::Exhaustive),
        _ => {
            let k = s
                .strip_prefix("sampled:")
                .ok_or_else(|| format!("expected exhaustive, sampled:<k>, auto or none, got `{s}`"))?;
            let samples: u64 = k.parse().map_err(|e| format!("bad sample count `{k}`: {e}"))?;
            if samples == 0 {
                return Err("sample count must be positive".into());
            }
            Ok(CutChoice::Sampled { samples })
        }
    }
}

pub fn parse_seed_range(s: &str) -> Result<SeedList, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected a..b or a..=b, got `{s}`"));
    };
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("bad seed `{v}`: {e}"));
    let (a, b) = (parse(a)?, parse(b)?);
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(format!("seed range `{s}` is empty"));
    }
    Ok(SeedList(seeds))
}
