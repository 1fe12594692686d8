//! Batch command-line front end for the countbox pipeline.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 when a
//! command produced no useful output.

pub mod commands;
pub mod config;
mod logfmt;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Failure};
use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "countbox", version, about = "Boxed training data from object-count labels")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract and confirm N boxes for every image of a manifest.
    Extract { manifest: PathBuf },
    /// Add masked patches of annotated boxes to the patch database at --out.
    Harvest { manifest: PathBuf },
    /// Write occluded variants of every annotated image.
    Augment {
        manifest: PathBuf,
        /// Patch database; needed for patch mode.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Score detections (JSON lines) against a manifest or an XML directory.
    Evaluate { predictions: PathBuf, ground_truth: PathBuf },
    /// Render a synthetic corpus.
    Synth,
    /// synth, extract, harvest, augment and evaluate in one run.
    Pipeline,
}

impl Cli {
    pub fn load_config(&self) -> Result<PipelineConfig, Failure> {
        let mut config = PipelineConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for kv in &self.set {
            config.apply_override(kv)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        config.validate()?;
        Ok(config)
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let ctx = Context::new(cli.load_config()?, &cli.out)?;
    match &cli.command {
        Command::Extract { manifest } => {
            let s = commands::cmd_extract(&ctx, manifest)?;
            println!(
                "annotated {} of {} images; manifest {}",
                s.annotated,
                s.annotated + s.dropped,
                s.manifest.display()
            );
        }
        Command::Harvest { manifest } => {
            let s = commands::cmd_harvest(&ctx, manifest)?;
            println!(
                "{} new patches, {} already present, {} skipped; database holds {}",
                s.inserted, s.existing, s.skipped, s.total
            );
        }
        Command::Augment { manifest, db } => {
            let s = commands::cmd_augment(&ctx, manifest, db.as_deref())?;
            println!(
                "wrote {} augmented images ({} failed); manifest {}",
                s.written,
                s.failed,
                s.manifest.display()
            );
        }
        Command::Evaluate {
            predictions,
            ground_truth,
        } => {
            print!("{}", commands::cmd_evaluate(&ctx, predictions, ground_truth)?.to_table());
        }
        Command::Synth => {
            let s = commands::cmd_synth(&ctx)?;
            println!("wrote {} scenes; manifest {}", s.written, s.manifest_path.display());
        }
        Command::Pipeline => {
            print!("{}", commands::cmd_pipeline(&ctx)?.to_table());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
