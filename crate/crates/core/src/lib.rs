//! Streaming video token reduction.
//!
//! Frames are cut into patches ([`geometry`]), consecutive steps are compared
//! cell by cell at pixel or feature level ([`redundancy`]), redundant tokens are
//! dropped while survivors keep their original `(t, h, w)` positions, and the
//! [`engine`] tracks the per-step drop ratio, fires scene-transition triggers
//! and keeps a budgeted FIFO memory of retained tokens. [`io`] holds the file
//! formats.

pub mod engine;
pub mod error;
pub mod features;
pub mod geometry;
pub mod io;
pub mod redundancy;

pub use engine::{
    latency_bound, run_batch, Engine, EngineConfig, MemoryBank, MemorySnapshot, Mode, PhaseTimings, StepInput,
    StepOutput, TimelineEntry, TriggerDetector, TriggerEvent,
};
pub use error::{Error, Result};
pub use features::pseudo_features;
pub use geometry::{
    patch_to_token_map, patchify, positions_for_step, token_coords, FrameSamples, GridGeometry, PatchGrid, Position3D,
};
pub use redundancy::{
    apply_mask, drop_ratio, feature_similarity, frame_aware_mask, pixel_similarity, threshold_mask, video_aware_masks,
    DropMask, SimilarityField, SimilarityKind, SlimTokenStream, TokenGrid,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
