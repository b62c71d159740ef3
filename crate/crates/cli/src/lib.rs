//! Command-line orchestration of the stop-anomaly pipeline. Every stage
//! reads its inputs from and writes its outputs to one directory, so runs can
//! be replayed from any point.

pub mod artifacts;
pub mod config;
pub mod geojson;
pub mod stages;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stopscan_core::stop::{diagnose, VelocityPair};

pub use artifacts::{Manifest, RunDir, Stamped};
pub use config::{Overrides, PipelineConfig};
pub use geojson::emit_geojson;
pub use stages::Stage;

#[derive(Debug, Parser)]
#[command(name = "stopscan", version, about = "Abnormal coach stop detection from sparse GPS")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate a GPS feed on the demo route, with route and ground truth.
    Synth,
    /// Parse and clean the raw GPS file.
    Ingest,
    /// Infer stop events from consecutive point pairs.
    Detect,
    /// Build the segment by coach-day stop-duration matrix.
    Matrix,
    /// Decompose the matrix under the configured baseline.
    Solve,
    /// Score segments and export GeoJSON.
    Score,
    /// Compute AP and ROC AUC against ground truth.
    Eval {
        /// Repeat solve and score over lambda, beta in {0, 0.1, ..., 1}.
        #[arg(long)]
        sweep: bool,
    },
    /// Ingest through eval in one go.
    Run,
    /// Print the detector's view of one velocity pair (speeds in m/s).
    Pair {
        v_i: f64,
        v_next: f64,
        /// Distance between the two points, meters.
        d: f64,
        /// Sampling interval, seconds.
        #[arg(default_value_t = 30.0)]
        interval: f64,
    },
}

/// Resolves the config, caps the worker pool, and runs the command.
pub fn execute(command: &Command, overrides: &Overrides) -> Result<()> {
    let config = overrides.resolve().context("invalid configuration")?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = config.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| dispatch(command, config))
}

fn dispatch(command: &Command, config: PipelineConfig) -> Result<()> {
    use stages::*;
    if let Command::Pair { v_i, v_next, d, interval } = *command {
        let pair = VelocityPair::new(v_i, v_next, d, interval)?;
        println!("{}", serde_json::to_string_pretty(&diagnose(&pair, &config.pipeline.detector))?);
        return Ok(());
    }
    let run = RunDir::open(config)?;
    match command {
        Command::Synth => {
            let s = run_stage(Stage::Synth, || synth(&run))?;
            log::info!("{} journeys, {} points, injected segments {:?}", s.journeys, s.points, s.injected_segment_ids);
        }
        Command::Ingest => {
            let r = run_stage(Stage::Ingest, || ingest(&run))?;
            log::info!("kept {} of {} points", r.kept, r.cleaning.parsed);
        }
        Command::Detect => {
            run_stage(Stage::Detect, || detect(&run))?;
        }
        Command::Matrix => {
            run_stage(Stage::Matrix, || matrix(&run))?;
        }
        Command::Solve => {
            run_stage(Stage::Solve, || solve(&run))?;
        }
        Command::Score => {
            run_stage(Stage::Score, || score(&run))?;
        }
        Command::Eval { sweep } => {
            let (m, _) = run_stage(Stage::Eval, || eval(&run, *sweep))?;
            println!("ap {:.4} auc {:.4}", m.report.ap, m.report.auc);
        }
        Command::Run => {
            if let Some(m) = run_all(&run)? {
                println!("ap {:.4} auc {:.4}", m.report.ap, m.report.auc);
            }
        }
        Command::Pair { .. } => unreachable!(),
    }
    Ok(())
}
