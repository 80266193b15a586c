//! Execution of a validated [`RunConfig`].

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use motifcut::dp::PrivacyParams;
use motifcut::eval::max_cut_error;
use motifcut::generate::generate;
use motifcut::graph::{PairWeights, WeightedGraph};
use motifcut::io::{format_graph, parse_graph, parse_signed_graph, write_graph};
use motifcut::mechanism::{run_mechanism, run_randomized_response, BaselineReport, MechanismConfig, MechanismReport};
use motifcut::report::{write_json, write_summary_csv, SummaryRow};
use motifcut::verify::run_all;

use crate::config::{CommandKind, RunConfig};
use crate::CliError;

pub fn execute(config: &RunConfig) -> Result<(), CliError> {
    match config.command {
        CommandKind::Gen => gen(config),
        CommandKind::Run => run(config),
        CommandKind::Baseline => baseline(config),
        CommandKind::Eval => eval(config),
        CommandKind::Verify => verify(config),
    }
}

/// `path` itself for a single run; `<stem>-seed<k><suffix>.<ext>` when
/// several seeds share one path.
fn output_path(path: &Path, seed: u64, multi: bool, suffix: &str) -> PathBuf {
    if !multi && suffix.is_empty() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let seed_part = if multi { format!("-seed{seed}") } else { String::new() };
    let name = match path.extension() {
        Some(ext) => format!("{stem}{seed_part}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{seed_part}{suffix}"),
    };
    path.with_file_name(name)
}

/// The input file, parsed once, or a graph generated from the model per seed.
enum Source {
    File(WeightedGraph),
    Model(motifcut::generate::GraphModel),
}

impl Source {
    fn open(config: &RunConfig) -> Result<Self, CliError> {
        match (&config.input, config.model) {
            (Some(path), _) => Ok(Source::File(parse_graph(path)?)),
            (None, Some(model)) => Ok(Source::Model(model)),
            (None, None) => Err(CliError::Config("no input graph".into())),
        }
    }

    fn graph(&self, seed: u64) -> Result<WeightedGraph, CliError> {
        match self {
            Source::File(g) => Ok(g.clone()),
            Source::Model(model) => Ok(generate(*model, seed)?),
        }
    }
}

// =============================================================================
// gen
// =============================================================================

fn gen(config: &RunConfig) -> Result<(), CliError> {
    let model = config.model.ok_or_else(|| CliError::Config("gen requires --model".into()))?;
    let multi = config.seeds.len() > 1;
    for &seed in &config.seeds {
        let g = generate(model, seed)?;
        match &config.output {
            Some(path) => write_graph(&g, &output_path(path, seed, multi, ""))?,
            None => print!("{}", format_graph(&g)),
        }
    }
    Ok(())
}

// =============================================================================
// run / baseline
// =============================================================================

struct RunOutput {
    seed: u64,
    mechanism: Option<(WeightedGraph, MechanismReport)>,
    baseline: Option<(motifcut::graph::NoisyGraph, BaselineReport)>,
}

fn score<G: PairWeights + ?Sized>(
    config: &RunConfig,
    input: &WeightedGraph,
    output: &G,
    seed: u64,
) -> Result<Option<motifcut::eval::CutErrorResult>, CliError> {
    match config.cut_mode.resolve(input.n(), seed) {
        Some(mode) => Ok(Some(max_cut_error(input, output, mode)?)),
        None => Ok(None),
    }
}

fn run_baseline(config: &RunConfig, g: &WeightedGraph, seed: u64) -> Result<(motifcut::graph::NoisyGraph, BaselineReport), CliError> {
    let eps = config.epsilon.ok_or_else(|| CliError::Config("--eps is required".into()))?;
    let (noisy, mut report) = run_randomized_response(g, eps, seed, config.clip_negative)?;
    report.cut_error = score(config, g, &noisy, seed)?;
    Ok((noisy, report))
}

fn run_one(config: &RunConfig, source: &Source, seed: u64, with_mechanism: bool) -> Result<RunOutput, CliError> {
    let g = source.graph(seed)?;
    let mechanism = if with_mechanism {
        let privacy = PrivacyParams::new(
            config.epsilon.unwrap_or(f64::NAN),
            config.delta.unwrap_or(f64::NAN),
            config.beta.unwrap_or(f64::NAN),
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        let mech_config = MechanismConfig { constants: config.constants, ..MechanismConfig::new(privacy) };
        let (out, mut report) = run_mechanism(&g, &mech_config, seed)?;
        report.cut_error = score(config, &g, &out, seed)?;
        Some((out, report))
    } else {
        None
    };
    let baseline = if !with_mechanism || config.baseline { Some(run_baseline(config, &g, seed)?) } else { None };
    Ok(RunOutput { seed, mechanism, baseline })
}

fn run_all_seeds(config: &RunConfig, with_mechanism: bool) -> Result<(), CliError> {
    let source = Source::open(config)?;
    let outputs: Vec<RunOutput> = config
        .seeds
        .par_iter()
        .map(|&seed| run_one(config, &source, seed, with_mechanism))
        .collect::<Result<_, _>>()?;

    // Writes happen serially, in seed order.
    let multi = config.seeds.len() > 1;
    let baseline_suffix = if with_mechanism { "-rr" } else { "" };
    let mut rows = Vec::new();
    for out in &outputs {
        if let Some((g, report)) = &out.mechanism {
            if let Some(path) = &config.output {
                write_graph(g, &output_path(path, out.seed, multi, ""))?;
            }
            if let Some(path) = &config.report {
                write_json(report, &output_path(path, out.seed, multi, ""))?;
            }
            let row = SummaryRow::from_mechanism(report);
            println!("{}", describe(&row));
            rows.push(row);
        }
        if let Some((g, report)) = &out.baseline {
            if let Some(path) = &config.output {
                write_graph(g, &output_path(path, out.seed, multi, baseline_suffix))?;
            }
            if let Some(path) = &config.report {
                write_json(report, &output_path(path, out.seed, multi, baseline_suffix))?;
            }
            let row = SummaryRow::from_baseline(report);
            println!("{}", describe(&row));
            rows.push(row);
        }
    }
    if let Some(path) = &config.csv {
        write_summary_csv(&rows, path)?;
    }
    Ok(())
}

fn describe(row: &SummaryRow) -> String {
    let mut s = format!(
        "{} seed={} n={} input_weight={} output_weight={:.6}",
        row.method, row.seed, row.n, row.input_total_weight, row.output_total_weight
    );
    if let Some(d) = row.degenerate {
        s.push_str(&format!(" degenerate={d}"));
    }
    if let Some(e) = row.max_cut_error {
        s.push_str(&format!(" max_cut_error={e:.6}"));
    }
    s
}

fn run(config: &RunConfig) -> Result<(), CliError> {
    run_all_seeds(config, true)
}

fn baseline(config: &RunConfig) -> Result<(), CliError> {
    run_all_seeds(config, false)
}

// =============================================================================
// eval / verify
// =============================================================================

fn eval(config: &RunConfig) -> Result<(), CliError> {
    let (Some(input), Some(compare)) = (&config.input, &config.compare) else {
        return Err(CliError::Config("eval requires --input and --compare".into()));
    };
    let g1 = parse_graph(input)?;
    let g2 = parse_signed_graph(compare)?;
    if g1.n() != g2.n() {
        return Err(CliError::Input(format!("graphs have {} and {} vertices", g1.n(), g2.n())));
    }
    let seed = config.seeds[0];
    let mode = config
        .cut_mode
        .resolve(g1.n(), seed)
        .ok_or_else(|| CliError::Config("eval needs a cut mode".into()))?;
    let result = max_cut_error(&g1, &g2, mode)?;
    println!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
    if let Some(path) = &config.report {
        write_json(&result, path)?;
    }
    Ok(())
}

fn verify(config: &RunConfig) -> Result<(), CliError> {
    let outcomes = run_all(config.seeds[0]);
    for o in &outcomes {
        println!("{} {}/{}: {}", if o.passed { "PASS" } else { "FAIL" }, o.module, o.name, o.detail);
    }
    if let Some(path) = &config.report {
        write_json(&outcomes, path)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(CliError::VerifyFailed { failed });
    }
    Ok(())
}
