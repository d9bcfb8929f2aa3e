//! Command-line front end for the cropping engine and the annotation service.

pub mod crop;
pub mod eval;
pub mod fixture;
pub mod server;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use semcrop::cropper::{CandidateConfig, CandidateSpec, CombineWeights, DEFAULT_SCALES};
use semcrop::semantics::ResolutionConfig;
use semcrop::{AspectRatio, EngineConfig, Taxonomy};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "semcrop", version, about = "Semantic image cropping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank crops of one image.
    Crop(crop::CropArgs),
    /// Benchmark the engine against a ground-truth manifest.
    Eval(eval::EvalArgs),
    /// Run the annotation HTTP service.
    Serve(server::ServeArgs),
    /// Write the synthetic fixture datasets.
    #[command(hide = true)]
    GenFixture(fixture::GenFixtureArgs),
}

/// Flags shared by every command that runs the engine.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Weight of the aesthetic map.
    #[arg(long, default_value_t = 1.0)]
    pub wa: f64,
    /// Weight of the semantic map.
    #[arg(long, default_value_t = 1.0)]
    pub ws: f64,
    /// Crop aspect ratio as N:D.
    #[arg(long, default_value = "1:1")]
    pub ratio: AspectRatio,
    /// Candidate stride in pixels; defaults to a fortieth of the larger image side.
    #[arg(long)]
    pub stride: Option<u32>,
    /// Comma-separated window scales relative to the largest fitting window.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Number of crops to keep.
    #[arg(long, default_value_t = 1)]
    pub top: usize,
    /// Minimum entity-label similarity.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    /// Fail instead of falling back to aesthetic-only cropping.
    #[arg(long)]
    pub strict: bool,
    /// Taxonomy file; the bundled one is used when omitted.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

impl EngineArgs {
    pub fn engine_config(&self) -> Result<EngineConfig> {
        let candidates = CandidateSpec {
            aspect: self.ratio,
            stride: self.stride,
            scales: self.scales.clone().unwrap_or_else(|| DEFAULT_SCALES.to_vec()),
        };
        // Validate stride and scales before any image is touched.
        CandidateConfig::new(candidates.aspect, candidates.stride.unwrap_or(1), candidates.scales.clone())?;
        if self.top == 0 {
            anyhow::bail!("--top must be at least 1");
        }
        Ok(EngineConfig {
            weights: CombineWeights::new(self.wa, self.ws)?,
            candidates,
            resolution: ResolutionConfig::new(self.threshold, Default::default())?,
            top_n: self.top,
            strict: self.strict,
            ..EngineConfig::default()
        })
    }

    pub fn load_taxonomy(&self) -> Result<Taxonomy> {
        match &self.taxonomy {
            Some(p) => Taxonomy::load(p).with_context(|| format!("loading taxonomy {}", p.display())),
            None => Ok(Taxonomy::bundled()),
        }
    }
}

pub(crate) fn ensure_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        anyhow::bail!("{what} `{}` does not exist", path.display());
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Crop(args) => crop::run(&args).map(|_| ()),
        Command::Eval(args) => eval::run(&args).map(|_| ()),
        Command::Serve(args) => server::run(&args),
        Command::GenFixture(args) => fixture::run(&args),
    }
}
