use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dtd_core::{EngineConfig, Error, GridGeometry, Mode, SimilarityKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankBy {
    Pixel,
    Feature,
}

/// Engine and grid flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Selection mode: pixel-threshold, feature-threshold, frame-aware or video-aware
    #[arg(long, default_value = "feature-threshold")]
    pub mode: String,

    /// Cosine similarity above which a token is dropped
    #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
    pub tau_feat: f32,

    /// Mean absolute pixel difference below which a token is dropped
    #[arg(long, default_value_t = 0.05)]
    pub tau_pixel: f32,

    /// Fraction of tokens dropped by the ranked modes
    #[arg(long, default_value_t = 0.85)]
    pub ratio: f64,

    /// Similarity the ranked modes sort by
    #[arg(long, value_enum, default_value_t = RankBy::Feature)]
    pub rank_by: RankBy,

    /// Drop ratio below which a step fires a trigger
    #[arg(long, default_value_t = 0.60)]
    pub trigger_threshold: f64,

    /// Minimum number of steps between two triggers
    #[arg(long, default_value_t = 2)]
    pub trigger_min_gap: usize,

    /// Token budget of the memory bank
    #[arg(long, default_value_t = 6144)]
    pub memory_budget: usize,

    /// Tokens every step keeps regardless of similarity
    #[arg(long, default_value_t = 0)]
    pub min_keep: usize,

    #[arg(long, default_value_t = 14)]
    pub patch_size: usize,

    #[arg(long, default_value_t = 2)]
    pub spatial_merge: usize,

    /// Frames per temporal step
    #[arg(long, default_value_t = 2)]
    pub temporal_patch: usize,

    /// Frame rate; defaults to the RVF1 header value, or 1 for other inputs
    #[arg(long)]
    pub fps: Option<f64>,

    /// Channels to decode image directories with (1 or 3)
    #[arg(long, default_value_t = 3)]
    pub channels: usize,

    /// Report format on stdout
    #[arg(long, value_enum, default_value_t = Report::Text)]
    pub report: Report,
}

/// Flag spelling of an engine or geometry field.
pub fn flag_for(field: &str) -> Option<&'static str> {
    Some(match field {
        "mode" => "--mode",
        "tau_feat" => "--tau-feat",
        "tau_pixel" => "--tau-pixel",
        "target_ratio" => "--ratio",
        "trigger_threshold" => "--trigger-threshold",
        "trigger_min_gap" => "--trigger-min-gap",
        "memory_budget" => "--memory-budget",
        "min_keep_per_step" => "--min-keep",
        "patch_size" => "--patch-size",
        "spatial_merge" => "--spatial-merge",
        "temporal_patch" => "--temporal-patch",
        "fps" => "--fps",
        "channels" => "--channels",
        _ => return None,
    })
}

/// Attaches the offending flag (or `fallback`, usually the input path) to a
/// config error.
pub fn name_flag(err: Error, fallback: &str) -> anyhow::Error {
    let name = match &err {
        Error::Config { field, .. } => flag_for(field).unwrap_or(fallback).to_string(),
        _ => fallback.to_string(),
    };
    anyhow::Error::new(err).context(name)
}

impl EngineArgs {
    pub fn mode(&self) -> Result<Mode> {
        self.mode.parse().map_err(|e| name_flag(e, "--mode"))
    }

    pub fn config(&self) -> Result<EngineConfig> {
        let config = EngineConfig {
            mode: self.mode()?,
            tau_pixel: self.tau_pixel,
            tau_feat: self.tau_feat,
            target_ratio: self.ratio,
            ranked_kind: match self.rank_by {
                RankBy::Pixel => SimilarityKind::Pixel,
                RankBy::Feature => SimilarityKind::Feature,
            },
            trigger_threshold: self.trigger_threshold,
            trigger_min_gap: self.trigger_min_gap,
            memory_budget: self.memory_budget,
            min_keep_per_step: self.min_keep,
        };
        config.validate().map_err(|e| name_flag(e, "--mode"))?;
        Ok(config)
    }

    /// Grid for frames of `width x height x channels`.
    pub fn geometry(
        &self,
        width: usize,
        height: usize,
        channels: usize,
        fps: f64,
        input: &str,
    ) -> Result<GridGeometry> {
        let geom = GridGeometry {
            input_width: width,
            input_height: height,
            channels,
            patch_size: self.patch_size,
            spatial_merge: self.spatial_merge,
            temporal_patch: self.temporal_patch,
            fps: self.fps.unwrap_or(fps),
        };
        geom.validate().map_err(|e| name_flag(e, input))?;
        Ok(geom)
    }
}

pub fn create_output(path: &PathBuf) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}
