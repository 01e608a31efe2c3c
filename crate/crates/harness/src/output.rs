//! Deterministic result files. Floats are written with Rust's shortest
//! round-trip formatting, so identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rnaopt_core::metrics::RunMetrics;
use serde::Serialize;

/// One run's summary.json document. `wall_time_s` is the only field
/// expected to differ between repeats of the same (config, seed).
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub final_best_fitness: Option<f64>,
    pub best_sequence: Option<String>,
    pub best_structure: Option<String>,
    pub total_evals: u64,
    pub wall_time_s: f64,
}

pub fn write_metrics_csv(path: &Path, metrics: &RunMetrics) -> io::Result<()> {
    let mut out = String::from("epoch,best_so_far,batch_avg,batch_max,evals\n");
    for row in &metrics.rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{}\n",
            row.epoch, row.best_so_far, row.batch_avg, row.batch_max, row.evals
        ));
    }
    fs::write(path, out)
}

pub fn write_scatter_csv(path: &Path, metrics: &RunMetrics) -> io::Result<()> {
    let mut out = String::from("episode,best_fitness\n");
    for &(episode, fitness) in &metrics.scatter {
        out.push_str(&format!("{episode},{fitness:?}\n"));
    }
    fs::write(path, out)
}

pub fn write_summary_json(path: &Path, summary: &RunSummary) -> io::Result<()> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")
}

pub fn write_report_json<T: Serialize>(path: &Path, report: &T) -> io::Result<()> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")
}
