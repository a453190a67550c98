//! Command-line front end for `hyperview`: synthetic data generation,
//! hypergraph loss evaluation and optimization, gradient checks, and
//! adapter distillation and analysis.
//!
//! Every command reads an optional JSON config (`--config`); the
//! `FORGE_SEED` environment variable replaces its seed. CSV reports start
//! with a `#` line echoing the command and the effective config.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::*;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "hyperview",
    version,
    about = "Multi-view hypergraph consistency and adapter distillation experiments"
)]
pub struct Cli {
    /// JSON configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a scene and write its views as PPM images and FDT latents.
    GenData(GenDataArgs),
    /// Hypergraph loss between two latent sets.
    MvhgEval(MvhgEvalArgs),
    /// Optimize noisy scene latents under the weighted objective.
    MvhgOptimize(MvhgOptimizeArgs),
    /// Distill synthetic teacher adapters into one student.
    Distill(DistillArgs),
    /// Additively fuse synthetic teacher adapters.
    Fuse(FuseArgs),
    /// Concept preservation and PCA of a model against its teachers.
    Analyze(AnalyzeArgs),
    /// Analytic against finite-difference gradients.
    GradCheck(GradCheckArgs),
}

/// Runs one parsed invocation, printing a short summary to stdout.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let start = Instant::now();
    match &cli.command {
        Command::GenData(a) => {
            let files = gen_data(a, cfg)?;
            println!("wrote {} files to {}", files.len(), a.out.display());
        }
        Command::MvhgEval(a) => {
            let row = mvhg_eval(a, &cfg)?;
            println!("loss {:.6e} over {} active nodes (k = {})", row.loss, row.active, row.k);
            report::log_run(&a.report, "mvhg-eval", start.elapsed())?;
        }
        Command::MvhgOptimize(a) => {
            let result = mvhg_optimize(a, &cfg);
            report::log_run(&a.report, "mvhg-optimize", start.elapsed())?;
            let traj = result?;
            let (first, last) = (traj[0].l_total, traj[traj.len() - 1].l_total);
            println!("{} steps: total loss {first:.6e} -> {last:.6e}", traj.len());
        }
        Command::Distill(a) => {
            let s = distill(a, &cfg)?;
            println!(
                "distilled {} teachers in {} iterations; preservation {:.4}",
                a.teachers.count,
                s.history.len(),
                s.preservation.average
            );
        }
        Command::Fuse(a) => {
            let p = fuse(a, &cfg)?;
            println!("fused {} teachers; preservation {:.4}", a.teachers.count, p.average);
        }
        Command::Analyze(a) => {
            let s = analyze(a, &cfg)?;
            for (t, score) in s.pca.labels.iter().zip(&s.preservation.per_teacher) {
                println!("{t}: {score:.4}");
            }
            println!("average: {:.4}", s.preservation.average);
            report::log_run(&a.report, "analyze", start.elapsed())?;
        }
        Command::GradCheck(a) => {
            let result = grad_check(a, &cfg);
            if let Some(r) = &a.report {
                report::log_run(r, "grad-check", start.elapsed())?;
            }
            let cases = result?;
            let worst = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
            println!(
                "{} gradient cases passed; worst relative error {worst:.3e}",
                cases.len()
            );
        }
    }
    Ok(())
}
