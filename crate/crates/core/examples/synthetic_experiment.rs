//! Generates a planted synthetic bundle and runs the offline experiment on it.
//!
//! `cargo run --release -p coldstart-core --example synthetic_experiment [seeds]`

use std::time::Instant;

use coldstart_core::catalog::Split;
use coldstart_core::dataset::{generate_synthetic, SyntheticConfig, PLANTED_SPACE};
use coldstart_core::eval::{write_breakdown_csv, write_report_table};
use coldstart_core::pipeline::{run_offline_experiment, PipelineConfig};
use coldstart_core::recommend::Strategy;
use coldstart_core::regressor::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(2), |s| s.parse())?;
    let t = Instant::now();
    let data = generate_synthetic(&SyntheticConfig::default())?;
    eprintln!("generated in {:.1?}", t.elapsed());
    let cfg = PipelineConfig {
        space: PLANTED_SPACE.into(),
        segments: 50,
        feature_segments: 50,
        train: TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            epochs: 20,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    };
    let seeds: Vec<u64> = (0..seeds).collect();
    let t = Instant::now();
    let out = run_offline_experiment(&data.bundle, &cfg, &Strategy::ALL, &seeds, Split::Test)?;
    eprintln!("experiment in {:.1?}", t.elapsed());
    write_report_table(&out.reports, std::io::stdout())?;
    for (s, rows) in &out.breakdowns {
        println!("\n{s}");
        write_breakdown_csv(rows, std::io::stdout())?;
    }
    Ok(())
}
