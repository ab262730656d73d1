//! CSV and plot-ready outputs.
//!
//! Files written to the output directory:
//! - `runs.csv`: one row per (method, run);
//! - `timesteps.csv`: one row per (method, run, step);
//! - `summary.csv`: one row per method;
//! - `comm_log.csv`: every flooded message;
//! - `cardinality_<method>.dat`: whitespace-separated mean cardinality trace.
//!
//! Control wall time goes to `timing.csv` through [`export_timing`] only, so
//! everything above is reproducible byte for byte. [`export_descent_trace`]
//! dumps coordinated descent turns to `descent_trace.jsonl`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::monte_carlo::MonteCarloSummary;
use crate::sim::pipeline::DescentTurn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub run: usize,
    pub seed: u64,
    pub mean_ospa: f64,
    pub mean_ospa2: f64,
    pub total_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub method: String,
    pub run: usize,
    pub step: u32,
    pub truth_cardinality: usize,
    pub estimated_cardinality: usize,
    pub eap_cardinality: f64,
    pub ospa: f64,
    pub bytes: usize,
    pub iterations: usize,
    pub commands: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub mean_ospa: f64,
    pub ospa_stderr: f64,
    pub mean_ospa2: f64,
    pub ospa2_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommRow {
    pub method: String,
    pub run: usize,
    pub step: u32,
    pub phase: String,
    pub origin: usize,
    pub sequence: u64,
    pub bytes: usize,
    pub rounds: usize,
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub run: usize,
    pub seed: u64,
    pub time_per_sensor: f64,
}

const RUN_HEADER: &[&str] = &["method", "run", "seed", "mean_ospa", "mean_ospa2", "total_bytes"];
const STEP_HEADER: &[&str] = &[
    "method",
    "run",
    "step",
    "truth_cardinality",
    "estimated_cardinality",
    "eap_cardinality",
    "ospa",
    "bytes",
    "iterations",
    "commands",
];
const SUMMARY_HEADER: &[&str] = &["method", "runs", "mean_ospa", "ospa_stderr", "mean_ospa2", "ospa2_stderr"];
const COMM_HEADER: &[&str] = &["method", "run", "step", "phase", "origin", "sequence", "bytes", "rounds", "copies"];
const TIMING_HEADER: &[&str] = &["method", "run", "seed", "time_per_sensor"];

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads back any of the CSV files written by [`export_results`].
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err)
}

/// Writes every output file for `results`, one summary per method, into
/// `dir` (created if missing). Returns the written paths.
pub fn export_results(results: &[MonteCarloSummary], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    let runs = results.iter().flat_map(|m| {
        m.runs.iter().enumerate().map(|(i, r)| RunRow {
            method: m.method.to_string(),
            run: i,
            seed: r.seed,
            mean_ospa: r.mean_ospa,
            mean_ospa2: r.mean_ospa2,
            total_bytes: r.steps.iter().map(|s| s.bytes).sum(),
        })
    });
    write_csv(&path("runs.csv"), RUN_HEADER, runs)?;

    let steps = results.iter().flat_map(|m| {
        m.runs.iter().enumerate().flat_map(move |(i, r)| {
            r.steps.iter().map(move |s| StepRow {
                method: m.method.to_string(),
                run: i,
                step: s.step,
                truth_cardinality: s.truth.len(),
                estimated_cardinality: s.cardinality,
                eap_cardinality: s.eap_cardinality,
                ospa: s.ospa,
                bytes: s.bytes,
                iterations: s.iterations,
                commands: s.commands.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
            })
        })
    });
    write_csv(&path("timesteps.csv"), STEP_HEADER, steps)?;

    let summary = results.iter().map(|m| SummaryRow {
        method: m.method.to_string(),
        runs: m.runs.len(),
        mean_ospa: m.mean_ospa,
        ospa_stderr: m.ospa_stderr,
        mean_ospa2: m.mean_ospa2,
        ospa2_stderr: m.ospa2_stderr,
    });
    write_csv(&path("summary.csv"), SUMMARY_HEADER, summary)?;

    let comm = results.iter().flat_map(|m| {
        m.runs.iter().enumerate().flat_map(move |(i, r)| {
            r.comm.iter().map(move |c| CommRow {
                method: m.method.to_string(),
                run: i,
                step: c.step,
                phase: c.phase.clone(),
                origin: c.origin,
                sequence: c.sequence,
                bytes: c.bytes,
                rounds: c.rounds,
                copies: c.copies,
            })
        })
    });
    write_csv(&path("comm_log.csv"), COMM_HEADER, comm)?;

    for m in results {
        let p = path(&format!("cardinality_{}.dat", m.method));
        let file = File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = BufWriter::new(file);
        let mut body = String::from("# step truth mean_estimate stderr mean_ospa\n");
        for s in &m.per_step {
            body.push_str(&format!(
                "{} {} {} {} {}\n",
                s.step, s.truth_cardinality, s.cardinality, s.cardinality_stderr, s.ospa
            ));
        }
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&p, e))?;
    }
    Ok(written)
}

/// Writes `timing.csv` (control wall time per sensor, per run) into `dir`.
pub fn export_timing(results: &[MonteCarloSummary], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("timing.csv");
    let rows = results.iter().flat_map(|m| {
        m.runs.iter().enumerate().map(|(i, r)| TimingRow {
            method: m.method.to_string(),
            run: i,
            seed: r.seed,
            time_per_sensor: r.time_per_sensor,
        })
    });
    write_csv(&path, TIMING_HEADER, rows)?;
    Ok(path)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    method: String,
    run: usize,
    step: u32,
    #[serde(flatten)]
    turn: &'a DescentTurn,
}

/// One JSON object per line and descent turn.
pub fn export_descent_trace(results: &[MonteCarloSummary], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("descent_trace.jsonl");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for m in results {
        for (run, r) in m.runs.iter().enumerate() {
            for st in &r.steps {
                for turn in &st.descent {
                    let line = TraceLine { method: m.method.to_string(), run, step: st.step, turn };
                    serde_json::to_writer(&mut w, &line).map_err(|e| Error::io(&path, e.into()))?;
                    w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
