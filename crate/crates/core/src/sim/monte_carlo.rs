//! Independent seeded runs of one method and their aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::sim::pipeline::{run, Method, RunOptions, RunResult};
use crate::sim::scenario::ScenarioConfig;

/// Sample mean and standard error of the mean (zero for one sample).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMeans {
    pub step: u32,
    pub truth_cardinality: f64,
    pub cardinality: f64,
    pub cardinality_stderr: f64,
    pub ospa: f64,
    pub bytes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub method: Method,
    pub runs: Vec<RunResult>,
    pub mean_ospa: f64,
    pub ospa_stderr: f64,
    pub mean_ospa2: f64,
    pub ospa2_stderr: f64,
    pub time_per_sensor: f64,
    pub per_step: Vec<StepMeans>,
}

impl MonteCarloSummary {
    pub fn from_runs(method: Method, runs: Vec<RunResult>) -> Self {
        let collect = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let (mean_ospa, ospa_stderr) = mean_and_stderr(&collect(&|r| r.mean_ospa));
        let (mean_ospa2, ospa2_stderr) = mean_and_stderr(&collect(&|r| r.mean_ospa2));
        let (time_per_sensor, _) = mean_and_stderr(&collect(&|r| r.time_per_sensor));
        let steps = runs.first().map_or(0, |r| r.steps.len());
        let per_step = (0..steps)
            .map(|i| {
                let at = |f: &dyn Fn(&RunResult) -> f64| mean_and_stderr(&collect(f));
                let (cardinality, cardinality_stderr) = at(&|r| r.steps[i].cardinality as f64);
                StepMeans {
                    step: runs[0].steps[i].step,
                    truth_cardinality: at(&|r| r.steps[i].truth.len() as f64).0,
                    cardinality,
                    cardinality_stderr,
                    ospa: at(&|r| r.steps[i].ospa).0,
                    bytes: at(&|r| r.steps[i].bytes as f64).0,
                }
            })
            .collect();
        Self {
            method,
            runs,
            mean_ospa,
            ospa_stderr,
            mean_ospa2,
            ospa2_stderr,
            time_per_sensor,
            per_step,
        }
    }

    /// Mean absolute cardinality error over runs and the steps after `after`.
    pub fn cardinality_error_after(&self, after: u32) -> f64 {
        let errors: Vec<f64> = self
            .runs
            .iter()
            .flat_map(|r| r.steps.iter().filter(|s| s.step > after))
            .map(|s| (s.cardinality as f64 - s.truth.len() as f64).abs())
            .collect();
        mean_and_stderr(&errors).0
    }
}

/// Runs seeds `base_seed, base_seed + 1, ...`. Runs execute in parallel
/// when `execution` allows it; each run is itself deterministic.
pub fn monte_carlo(
    config: &ScenarioConfig,
    method: Method,
    runs: usize,
    base_seed: u64,
    dcd_runs: usize,
    execution: Execution,
) -> Result<MonteCarloSummary> {
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    let results = map_indices(execution, runs, |i| {
        run(
            config,
            RunOptions {
                method,
                seed: base_seed + i as u64,
                dcd_runs,
                execution,
            },
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloSummary::from_runs(method, results))
}
