use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fdcd::exec::Execution;
use fdcd::sim::export::{export_descent_trace, export_results, export_timing};
use fdcd::sim::monte_carlo::monte_carlo;
use fdcd::sim::pipeline::Method;
use fdcd::sim::scenario::ScenarioConfig;

/// Monte Carlo runs of multi-sensor tracking under a sensor-control method.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// Built-in scenario `1` or `2`, or a path to a TOML scenario file.
    #[arg(long, default_value = "1")]
    scenario: String,

    /// fixed, isc, dcd, fdcd, a comma-separated list, or `all`.
    #[arg(long, default_value = "fdcd")]
    method: String,

    /// Monte Carlo runs (defaults to the scenario's value).
    #[arg(long)]
    runs: Option<usize>,

    /// Seed of the first run; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,

    /// Random restarts per DCD-SC decision.
    #[arg(long)]
    dcd_runs: Option<usize>,

    /// Cut the scenario to this many steps.
    #[arg(long)]
    steps: Option<u32>,

    #[arg(long, default_value = "results")]
    out: PathBuf,

    /// Also write control wall time to timing.csv.
    #[arg(long)]
    timing: bool,

    /// Dump coordinated descent turns to descent_trace.jsonl.
    #[arg(long)]
    trace: bool,

    /// Run everything on one thread.
    #[arg(long)]
    sequential: bool,

    /// Print the resolved scenario as TOML and exit.
    #[arg(long)]
    print_scenario: bool,
}

fn parse_methods(spec: &str) -> fdcd::Result<Vec<Method>> {
    if spec == "all" {
        return Ok(Method::ALL.to_vec());
    }
    spec.split(',').map(|m| m.trim().parse()).collect()
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> fdcd::Result<()> {
    let mut config = ScenarioConfig::resolve(&args.scenario)?;
    if let Some(steps) = args.steps {
        config = config.truncated(steps);
    }
    if args.print_scenario {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let methods = parse_methods(&args.method)?;
    let runs = args.runs.unwrap_or(config.monte_carlo.runs);
    let seed = args.seed.unwrap_or(config.monte_carlo.base_seed);
    let dcd_runs = args.dcd_runs.unwrap_or(config.dcd_runs);
    let execution = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };

    println!("{:<8} {:>6} {:>12} {:>12} {:>14}", "method", "runs", "OSPA (m)", "OSPA2 (m)", "time/sensor");
    let mut results = Vec::new();
    for method in methods {
        let summary = monte_carlo(&config, method, runs, seed, dcd_runs, execution)?;
        println!(
            "{:<8} {:>6} {:>7.2}±{:<4.2} {:>7.2}±{:<4.2} {:>13.4}s",
            method.to_string(),
            runs,
            summary.mean_ospa,
            summary.ospa_stderr,
            summary.mean_ospa2,
            summary.ospa2_stderr,
            summary.time_per_sensor
        );
        results.push(summary);
    }
    export_results(&results, &args.out)?;
    if args.timing {
        export_timing(&results, &args.out)?;
    }
    if args.trace {
        export_descent_trace(&results, &args.out)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
