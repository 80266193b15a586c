//! Report output: the complete JSON record and one-row-per-run CSV summaries.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::CutMode;
use crate::mechanism::{BaselineReport, MechanismReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::File { path: path.to_path_buf(), source }
}

/// Pretty-printed JSON, newline terminated.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(value)?).map_err(file_error(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(file_error(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// One CSV row per run. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub input_total_weight: f64,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub degenerate: Option<bool>,
    pub released_total_weight: Option<f64>,
    pub iterations: Option<usize>,
    pub restarts: Option<usize>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub chosen_restart: Option<usize>,
    pub output_total_weight: f64,
    pub max_cut_error: Option<f64>,
    pub cut_mode: Option<String>,
    pub evaluated_cuts: Option<u64>,
    pub total_ms: Option<f64>,
}

fn mode_label(mode: &CutMode) -> String {
    match mode {
        CutMode::Exhaustive => "exhaustive".into(),
        CutMode::Sampled { samples, .. } => format!("sampled:{samples}"),
    }
}

impl SummaryRow {
    pub fn from_mechanism(r: &MechanismReport) -> Self {
        Self {
            method: "mechanism".into(),
            seed: r.seed,
            n: r.input.n,
            input_total_weight: r.input.total_weight,
            epsilon: r.config.privacy.epsilon,
            delta: Some(r.config.privacy.delta),
            beta: Some(r.config.privacy.beta),
            degenerate: Some(r.degenerate),
            released_total_weight: Some(r.preprocess.total_weight),
            iterations: r.params.map(|p| p.iterations),
            restarts: r.params.map(|p| p.restarts),
            lambda: r.params.map(|p| p.lambda),
            eta: r.params.map(|p| p.eta),
            chosen_restart: r.chosen_restart,
            output_total_weight: r.output_total_weight,
            max_cut_error: r.cut_error.as_ref().map(|c| c.max_error),
            cut_mode: r.cut_error.as_ref().map(|c| mode_label(&c.mode)),
            evaluated_cuts: r.cut_error.as_ref().map(|c| c.evaluated_cuts),
            total_ms: r.timings.as_ref().map(|t| t.total_ms),
        }
    }

    pub fn from_baseline(r: &BaselineReport) -> Self {
        Self {
            method: if r.clip_negative { "rr_clipped".into() } else { "rr".into() },
            seed: r.seed,
            n: r.input.n,
            input_total_weight: r.input.total_weight,
            epsilon: r.epsilon,
            delta: None,
            beta: None,
            degenerate: None,
            released_total_weight: None,
            iterations: None,
            restarts: None,
            lambda: None,
            eta: None,
            chosen_restart: None,
            output_total_weight: r.output_total_weight,
            max_cut_error: r.cut_error.as_ref().map(|c| c.max_error),
            cut_mode: r.cut_error.as_ref().map(|c| mode_label(&c.mode)),
            evaluated_cuts: r.cut_error.as_ref().map(|c| c.evaluated_cuts),
            total_ms: r.timings.as_ref().map(|t| t.total_ms),
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    std::fs::write(path, summary_csv(rows)?).map_err(file_error(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::PrivacyParams;
    use crate::graph::WeightedGraph;
    use crate::mechanism::{run_mechanism, run_randomized_response, MechanismConfig};

    #[test]
    fn csv_has_one_row_per_run_and_stable_header() {
        let g = WeightedGraph::complete(6).scaled(2.0).unwrap();
        let config = MechanismConfig::new(PrivacyParams::new(2.0, 1e-6, 0.25).unwrap());
        let mut rows = Vec::new();
        for seed in 0..3 {
            let (_, r) = run_mechanism(&g, &config, seed).unwrap();
            rows.push(SummaryRow::from_mechanism(&r));
            let (_, b) = run_randomized_response(&g, 2.0, seed, false).unwrap();
            rows.push(SummaryRow::from_baseline(&b));
        }
        let text = summary_csv(&rows).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("method,seed,n,input_total_weight,epsilon,delta,beta,degenerate"));
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let back: Vec<SummaryRow> = reader.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back[1].method, "rr");
    }

    #[test]
    fn json_round_trip() {
        let g = WeightedGraph::complete(5);
        let config = MechanismConfig::new(PrivacyParams::new(1.0, 1e-6, 0.25).unwrap());
        let (_, r) = run_mechanism(&g, &config, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_json(&r, &path).unwrap();
        let back: MechanismReport = read_json(&path).unwrap();
        assert_eq!(back, r);
    }
}
