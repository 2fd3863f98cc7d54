//! Incremental token-drop state machine.
//!
//! [`Engine::push`] consumes one temporal step at a time, compares it against
//! the cached previous step only, and immediately returns the drop mask, the
//! slimmed fragment, the timeline entry and an optional trigger event. Retained
//! fragments go into a budgeted FIFO [`MemoryBank`].

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::pseudo_features;
use crate::geometry::{positions_for_step, GridGeometry, PatchGrid};
use crate::redundancy::{
    apply_mask, check_ratio, check_tau, drop_ratio, enforce_min_keep, feature_similarity, frame_aware_mask,
    pixel_similarity, threshold_mask, video_aware_masks, DropMask, SimilarityField, SimilarityKind, SlimTokenStream,
    TokenGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    PixelThreshold,
    #[default]
    FeatureThreshold,
    /// Fixed drop ratio per step.
    FrameAware,
    /// One drop budget pooled over the whole clip. Batch only.
    VideoAware,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PixelThreshold => "pixel-threshold",
            Mode::FeatureThreshold => "feature-threshold",
            Mode::FrameAware => "frame-aware",
            Mode::VideoAware => "video-aware",
        }
    }

    pub fn is_ranked(self) -> bool {
        matches!(self, Mode::FrameAware | Mode::VideoAware)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel-threshold" => Ok(Mode::PixelThreshold),
            "feature-threshold" => Ok(Mode::FeatureThreshold),
            "frame-aware" => Ok(Mode::FrameAware),
            "video-aware" => Ok(Mode::VideoAware),
            other => Err(Error::config(
                "mode",
                format!(
                    "unknown mode {other:?} (expected pixel-threshold, feature-threshold, frame-aware or video-aware)"
                ),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mode: Mode,
    pub tau_pixel: f32,
    pub tau_feat: f32,
    /// Drop fraction for the ranked modes.
    pub target_ratio: f64,
    /// Similarity the ranked modes sort by.
    pub ranked_kind: SimilarityKind,
    pub trigger_threshold: f64,
    /// Minimum distance in steps between two triggers.
    pub trigger_min_gap: usize,
    /// Maximum number of tokens held in the memory bank.
    pub memory_budget: usize,
    pub min_keep_per_step: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::FeatureThreshold,
            tau_pixel: 0.05,
            tau_feat: 0.25,
            target_ratio: 0.85,
            ranked_kind: SimilarityKind::Feature,
            trigger_threshold: 0.60,
            trigger_min_gap: 2,
            memory_budget: 6144,
            min_keep_per_step: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(SimilarityKind::Pixel, self.tau_pixel)?;
        check_tau(SimilarityKind::Feature, self.tau_feat)?;
        check_ratio(self.target_ratio)?;
        if !(self.trigger_threshold > 0.0 && self.trigger_threshold <= 1.0) {
            return Err(Error::config(
                "trigger_threshold",
                format!("must lie in (0, 1], got {}", self.trigger_threshold),
            ));
        }
        if self.trigger_min_gap == 0 {
            return Err(Error::config("trigger_min_gap", "must be at least 1"));
        }
        Ok(())
    }

    /// The similarity measure the configured mode compares steps with.
    pub fn similarity_kind(&self) -> SimilarityKind {
        match self.mode {
            Mode::PixelThreshold => SimilarityKind::Pixel,
            Mode::FeatureThreshold => SimilarityKind::Feature,
            Mode::FrameAware | Mode::VideoAware => self.ranked_kind,
        }
    }
}

/// Worst-case staleness of the newest memory entry: one temporal step of video.
pub fn latency_bound(geom: &GridGeometry) -> f64 {
    geom.step_duration()
}

/// One point of the drop-ratio curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEntry {
    pub step: usize,
    /// `step * temporal_patch / fps` seconds.
    pub wall_time: f64,
    pub drop_ratio: f64,
    pub retained: usize,
    pub total: usize,
    #[serde(rename = "trigger")]
    pub is_trigger: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriggerEvent {
    pub step: usize,
    pub wall_time: f64,
    pub drop_ratio: f64,
}

/// Fires on steps whose drop ratio falls below the threshold, at most once
/// every `min_gap` steps. Step 0 never fires.
#[derive(Debug, Clone)]
pub struct TriggerDetector {
    threshold: f64,
    min_gap: usize,
    last: Option<usize>,
}

impl TriggerDetector {
    pub fn new(threshold: f64, min_gap: usize) -> Self {
        Self {
            threshold,
            min_gap,
            last: None,
        }
    }

    pub fn last_trigger(&self) -> Option<usize> {
        self.last
    }

    pub fn observe(&mut self, step: usize, ratio: f64) -> bool {
        if step == 0 || ratio >= self.threshold {
            return false;
        }
        if let Some(last) = self.last {
            if step - last < self.min_gap {
                return false;
            }
        }
        self.last = Some(step);
        true
    }
}

/// Budgeted FIFO of per-step slim fragments.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    budget: usize,
    queue: VecDeque<(usize, Arc<SlimTokenStream>)>,
    occupancy: usize,
    warnings: Vec<String>,
}

impl MemoryBank {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            queue: VecDeque::new(),
            occupancy: 0,
            warnings: Vec::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Steps currently held, oldest first.
    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.queue.iter().map(|(s, _)| *s)
    }

    /// Appends a step's fragment and evicts whole steps from the front until the
    /// budget holds again. Returns the evicted steps in eviction order.
    pub fn push(&mut self, step: usize, fragment: Arc<SlimTokenStream>) -> Vec<usize> {
        let mut evicted = Vec::new();
        let mut fragment = fragment;
        if fragment.len() > self.budget {
            let keep = self.budget;
            let skip = fragment.len() - keep;
            let msg = format!(
                "step {step}: fragment of {} tokens exceeds memory budget {keep}; keeping its last {keep}",
                fragment.len()
            );
            // a zero budget means "keep nothing", not a misconfiguration
            if keep > 0 {
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
            let dim = fragment.dim;
            fragment = Arc::new(SlimTokenStream {
                dim,
                positions: fragment.positions[skip..].to_vec(),
                embeddings: fragment.embeddings[skip * dim..].to_vec(),
                source_steps: fragment.source_steps,
            });
        }
        self.occupancy += fragment.len();
        self.queue.push_back((step, fragment));
        while self.occupancy > self.budget {
            let (old, frag) = self.queue.pop_front().expect("occupancy > 0 implies a queued fragment");
            self.occupancy -= frag.len();
            evicted.push(old);
        }
        evicted
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        MemorySnapshot {
            fragments: self.queue.iter().cloned().collect(),
        }
    }
}

/// Immutable view of the memory bank, oldest fragment first.
#[derive(Debug, Clone, Default)]
pub struct MemorySnapshot {
    fragments: Vec<(usize, Arc<SlimTokenStream>)>,
}

impl MemorySnapshot {
    /// Total tokens held.
    pub fn len(&self) -> usize {
        self.fragments.iter().map(|(_, f)| f.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> Vec<usize> {
        self.fragments.iter().map(|(s, _)| *s).collect()
    }

    pub fn fragments(&self) -> impl Iterator<Item = (usize, &SlimTokenStream)> {
        self.fragments.iter().map(|(s, f)| (*s, f.as_ref()))
    }

    /// Concatenation of the held fragments.
    pub fn to_stream(&self) -> SlimTokenStream {
        let dim = self.fragments.first().map_or(0, |(_, f)| f.dim);
        let mut out = SlimTokenStream::empty(dim);
        for (_, f) in &self.fragments {
            out.extend_from(f).expect("fragments of one engine share a width");
        }
        out
    }
}

/// One temporal step handed to the engine. Pixel modes need `pixels`, feature
/// modes need `tokens`. When only pixels are given, retained tokens carry
/// pseudo-features (see [`crate::features`]).
#[derive(Debug, Clone, Default)]
pub struct StepInput {
    pub pixels: Option<Arc<PatchGrid>>,
    pub tokens: Option<Arc<TokenGrid>>,
}

impl StepInput {
    pub fn pixels(grid: impl Into<Arc<PatchGrid>>) -> Self {
        Self {
            pixels: Some(grid.into()),
            tokens: None,
        }
    }

    pub fn tokens(grid: impl Into<Arc<TokenGrid>>) -> Self {
        Self {
            pixels: None,
            tokens: Some(grid.into()),
        }
    }

    pub fn both(pixels: impl Into<Arc<PatchGrid>>, tokens: impl Into<Arc<TokenGrid>>) -> Self {
        Self {
            pixels: Some(pixels.into()),
            tokens: Some(tokens.into()),
        }
    }

    pub fn step(&self) -> Option<usize> {
        self.tokens
            .as_ref()
            .map(|t| t.step)
            .or_else(|| self.pixels.as_ref().map(|p| p.step))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub step: usize,
    /// Similarity against the previous step; `None` for step 0.
    pub field: Option<SimilarityField>,
    pub mask: DropMask,
    pub fragment: Arc<SlimTokenStream>,
    pub entry: TimelineEntry,
    pub trigger: Option<TriggerEvent>,
    /// Steps pushed out of the memory bank by this step, oldest first.
    pub evicted: Vec<usize>,
    /// Memory bank occupancy after this step.
    pub memory_tokens: usize,
}

/// Accumulated wall-clock time per engine phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub similarity: Duration,
    pub selection: Duration,
    pub commit: Duration,
}

#[derive(Debug)]
pub struct Engine {
    geom: GridGeometry,
    config: EngineConfig,
    next_step: usize,
    prev: Option<StepInput>,
    trigger: TriggerDetector,
    timeline: Vec<TimelineEntry>,
    triggers: Vec<TriggerEvent>,
    memory: MemoryBank,
    timings: PhaseTimings,
}

impl Engine {
    pub fn new(geom: GridGeometry, config: EngineConfig) -> Result<Self> {
        geom.validate()?;
        config.validate()?;
        Ok(Self {
            trigger: TriggerDetector::new(config.trigger_threshold, config.trigger_min_gap),
            memory: MemoryBank::new(config.memory_budget),
            geom,
            config,
            next_step: 0,
            prev: None,
            timeline: Vec::new(),
            triggers: Vec::new(),
            timings: PhaseTimings::default(),
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn timeline(&self) -> &[TimelineEntry] {
        &self.timeline
    }

    pub fn triggers(&self) -> &[TriggerEvent] {
        &self.triggers
    }

    pub fn memory(&self) -> &MemoryBank {
        &self.memory
    }

    pub fn memory_snapshot(&self) -> MemorySnapshot {
        self.memory.snapshot()
    }

    pub fn timings(&self) -> PhaseTimings {
        self.timings
    }

    pub fn latency_bound(&self) -> f64 {
        latency_bound(&self.geom)
    }

    /// Step the engine expects next.
    pub fn next_step(&self) -> usize {
        self.next_step
    }

    /// Processes one step against the cached previous step.
    pub fn push(&mut self, input: StepInput) -> Result<StepOutput> {
        if self.config.mode == Mode::VideoAware {
            return Err(Error::config(
                "mode",
                "video-aware selection ranks the whole clip and is only available in batch runs",
            ));
        }
        self.admit(&input)?;
        let started = Instant::now();
        let field = match &self.prev {
            Some(prev) => Some(self.similarity(prev, &input)?),
            None => None,
        };
        let selecting = Instant::now();
        self.timings.similarity += selecting - started;
        let mask = match &field {
            None => self.all_keep(input.step().unwrap_or(0)),
            Some(f) => match self.config.mode {
                Mode::PixelThreshold => threshold_mask(f, self.config.tau_pixel)?,
                Mode::FeatureThreshold => threshold_mask(f, self.config.tau_feat)?,
                Mode::FrameAware => frame_aware_mask(f, self.config.target_ratio)?,
                Mode::VideoAware => unreachable!("rejected above"),
            },
        };
        self.timings.selection += selecting.elapsed();
        self.commit(input, field, mask)
    }

    fn all_keep(&self, step: usize) -> DropMask {
        DropMask::all_keep(step, self.geom.tokens_h(), self.geom.tokens_w())
    }

    /// Checks that `input` carries what the mode needs, matches the lattice and
    /// is the next step in sequence.
    fn admit(&self, input: &StepInput) -> Result<()> {
        let kind = self.config.similarity_kind();
        let mode = self.config.mode;
        match kind {
            SimilarityKind::Pixel if input.pixels.is_none() => {
                return Err(Error::config(
                    "mode",
                    format!("{mode} compares pixels but the step carries no patch grid"),
                ))
            }
            SimilarityKind::Feature if input.tokens.is_none() && input.pixels.is_none() => {
                return Err(Error::config(
                    "mode",
                    format!("{mode} compares embeddings but the step carries no token grid"),
                ))
            }
            _ => {}
        }
        if let Some(p) = &input.pixels {
            if p.geometry() != &self.geom {
                return Err(Error::InputShape(format!(
                    "patch grid of step {} was built for a different geometry",
                    p.step
                )));
            }
        }
        if let Some(t) = &input.tokens {
            if t.height() != self.geom.tokens_h() || t.width() != self.geom.tokens_w() {
                return Err(Error::InputShape(format!(
                    "token grid of step {} is {}x{}, lattice is {}x{}",
                    t.step,
                    t.height(),
                    t.width(),
                    self.geom.tokens_h(),
                    self.geom.tokens_w()
                )));
            }
            if let Some(prev) = self.prev.as_ref().and_then(|p| p.tokens.as_ref()) {
                if prev.dim() != t.dim() {
                    return Err(Error::InputShape(format!(
                        "token grid of step {} has width {}, previous steps have {}",
                        t.step,
                        t.dim(),
                        prev.dim()
                    )));
                }
            }
        }
        if let (Some(p), Some(t)) = (&input.pixels, &input.tokens) {
            if p.step != t.step {
                return Err(Error::InputShape(format!(
                    "patch grid is step {} but token grid is step {}",
                    p.step, t.step
                )));
            }
        }
        let step = input.step().unwrap_or(0);
        if step != self.next_step {
            return Err(Error::Sequence {
                expected: self.next_step,
                got: step,
            });
        }
        Ok(())
    }

    fn similarity(&self, prev: &StepInput, cur: &StepInput) -> Result<SimilarityField> {
        match self.config.similarity_kind() {
            SimilarityKind::Pixel => match (&prev.pixels, &cur.pixels) {
                (Some(a), Some(b)) => pixel_similarity(a, b),
                _ => Err(Error::config(
                    "mode",
                    "pixel comparison needs patch grids for both steps",
                )),
            },
            SimilarityKind::Feature => match (&prev.tokens, &cur.tokens) {
                (Some(a), Some(b)) => feature_similarity(a, b),
                (None, None) => match (&prev.pixels, &cur.pixels) {
                    (Some(a), Some(b)) => feature_similarity(&pseudo_features(a), &pseudo_features(b)),
                    _ => unreachable!("admit guarantees pixels when tokens are absent"),
                },
                _ => Err(Error::InputShape(
                    "feature comparison needs token grids on both steps or on neither".into(),
                )),
            },
        }
    }

    fn commit(&mut self, input: StepInput, field: Option<SimilarityField>, mut mask: DropMask) -> Result<StepOutput> {
        let started = Instant::now();
        let step = self.next_step;
        if let Some(f) = &field {
            enforce_min_keep(&mut mask, f, self.config.min_keep_per_step);
        }
        let fragment = {
            let owned;
            let tokens: &TokenGrid = match (&input.tokens, &input.pixels) {
                (Some(t), _) => t,
                (None, Some(p)) => {
                    owned = pseudo_features(p);
                    &owned
                }
                (None, None) => unreachable!("admit rejects empty inputs"),
            };
            Arc::new(apply_mask(tokens, &positions_for_step(&self.geom, step), &mask)?)
        };
        let ratio = drop_ratio(&mask);
        let wall_time = self.geom.wall_time(step);
        let is_trigger = self.trigger.observe(step, ratio);
        let entry = TimelineEntry {
            step,
            wall_time,
            drop_ratio: ratio,
            retained: mask.kept(),
            total: mask.cells(),
            is_trigger,
        };
        let trigger = is_trigger.then_some(TriggerEvent {
            step,
            wall_time,
            drop_ratio: ratio,
        });
        let evicted = self.memory.push(step, Arc::clone(&fragment));

        self.timeline.push(entry);
        self.triggers.extend(trigger);
        self.prev = Some(input);
        self.next_step += 1;
        self.timings.commit += started.elapsed();
        Ok(StepOutput {
            step,
            field,
            mask,
            fragment,
            entry,
            trigger,
            evicted,
            memory_tokens: self.memory.occupancy(),
        })
    }

    /// Runs a whole clip. Threshold and frame-aware modes match a sequence of
    /// [`Engine::push`] calls exactly; video-aware mode ranks every step's
    /// cells in one pool.
    pub fn run_batch(&mut self, inputs: Vec<StepInput>) -> Result<Vec<StepOutput>> {
        if inputs.is_empty() {
            return Err(Error::InputShape("a batch run needs at least one step".into()));
        }
        if self.config.mode != Mode::VideoAware {
            return inputs.into_iter().map(|input| self.push(input)).collect();
        }

        let started = Instant::now();
        let mut fields = Vec::with_capacity(inputs.len());
        for (i, input) in inputs.iter().enumerate() {
            if i == 0 {
                self.admit(input)?;
            } else {
                let step = input.step().unwrap_or(0);
                if step != self.next_step + i {
                    return Err(Error::Sequence {
                        expected: self.next_step + i,
                        got: step,
                    });
                }
                fields.push(self.similarity(&inputs[i - 1], input)?);
            }
        }
        let selecting = Instant::now();
        self.timings.similarity += selecting - started;
        let mut masks = video_aware_masks(&fields, self.config.target_ratio)?;
        self.timings.selection += selecting.elapsed();

        let first_mask = self.all_keep(self.next_step);
        let mut fields = fields.into_iter();
        let mut outputs = Vec::with_capacity(inputs.len());
        for (i, input) in inputs.into_iter().enumerate() {
            if i > 0 {
                self.admit(&input)?;
            }
            let (field, mask) = if i == 0 {
                (None, first_mask.clone())
            } else {
                (fields.next(), std::mem::replace(&mut masks[i - 1], first_mask.clone()))
            };
            outputs.push(self.commit(input, field, mask)?);
        }
        Ok(outputs)
    }
}

/// Convenience wrapper: a fresh engine over `inputs`.
pub fn run_batch(geom: GridGeometry, config: EngineConfig, inputs: Vec<StepInput>) -> Result<Vec<StepOutput>> {
    Engine::new(geom, config)?.run_batch(inputs)
}
