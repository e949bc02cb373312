//! A small seeded campaign: constructive and oracle uniform volumes against E[C]
//! across dimensions, written as JSON and CSV.
//!
//! Run with `cargo run --release --example convergence_experiment -- 5 8 6`.

use cubeflow::assemble::UniformMode;
use cubeflow::harness::io::{write_records, Format};
use cubeflow::harness::{run_experiment, ExperimentConfig};
use cubeflow::layercross::MiddleMethod;

fn main() -> cubeflow::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u32>().ok());
    let lo = args.next().flatten().unwrap_or(5);
    let hi = args.next().flatten().unwrap_or(8);
    let seeds = args.next().flatten().unwrap_or(6) as u64;
    let dist = "bernoulli:0.75".parse()?;
    let mean = 0.75;
    let mut config = ExperimentConfig::new((lo..=hi).collect(), dist, (1..=seeds).collect(), UniformMode::Opp);
    config.middle = MiddleMethod::Maxflow;
    config.omega = 0.05;

    let report = run_experiment(&config)?;
    println!("  d  runs  failed  median phi  median oracle  oracle/E[C]");
    for s in &report.summary {
        let oracle = s.median_phi_oracle.unwrap_or(f64::NAN);
        println!(
            "{:>3}  {:>4}  {:>6}  {:>10.4}  {:>13.4}  {:>11.3}",
            s.d,
            s.runs,
            s.runs - s.ok,
            s.median_phi_constructive.unwrap_or(f64::NAN),
            oracle,
            oracle / mean
        );
    }

    let dir = std::env::temp_dir();
    let json = dir.join("cubeflow_convergence.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report)?)?;
    let csv = dir.join("cubeflow_convergence.csv");
    write_records(&report.rows, Format::Csv, std::fs::File::create(&csv)?)?;
    println!("\nwrote {} and {}", json.display(), csv.display());
    Ok(())
}
