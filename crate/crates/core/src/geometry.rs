//! Patch and token lattice geometry.
//!
//! A frame of `input_width x input_height` pixels is cut into square patches of
//! `patch_size` pixels. `spatial_merge x spatial_merge` neighbouring patches, taken
//! from each of the `temporal_patch` frames that make up one temporal step, are
//! owned by a single token cell. Every other module addresses tokens through the
//! [`Position3D`] values produced here.

use std::fmt;

use crate::error::{Error, Result};

/// Patch/token lattice parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub input_width: usize,
    pub input_height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub patch_size: usize,
    pub spatial_merge: usize,
    /// Raw frames collapsed into one temporal step.
    pub temporal_patch: usize,
    /// Ingest clock in frames per second.
    pub fps: f64,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self {
            input_width: 448,
            input_height: 448,
            channels: 3,
            patch_size: 14,
            spatial_merge: 2,
            temporal_patch: 2,
            fps: 1.0,
        }
    }
}

impl GridGeometry {
    pub fn new(input_width: usize, input_height: usize, channels: usize) -> Result<Self> {
        let geom = Self {
            input_width,
            input_height,
            channels,
            ..Self::default()
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn with_patch_size(mut self, patch_size: usize) -> Self {
        self.patch_size = patch_size;
        self
    }

    pub fn with_spatial_merge(mut self, spatial_merge: usize) -> Self {
        self.spatial_merge = spatial_merge;
        self
    }

    pub fn with_temporal_patch(mut self, temporal_patch: usize) -> Self {
        self.temporal_patch = temporal_patch;
        self
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.input_height == 0 {
            return Err(Error::config(
                "input_size",
                format!(
                    "frame dimensions must be positive, got {}x{}",
                    self.input_width, self.input_height
                ),
            ));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config(
                "channels",
                format!("must be 1 or 3, got {}", self.channels),
            ));
        }
        if self.patch_size == 0 {
            return Err(Error::config("patch_size", "must be at least 1"));
        }
        if self.spatial_merge == 0 {
            return Err(Error::config("spatial_merge", "must be at least 1"));
        }
        if self.temporal_patch == 0 {
            return Err(Error::config("temporal_patch", "must be at least 1"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::config(
                "fps",
                format!("must be finite and positive, got {}", self.fps),
            ));
        }
        let block = self.patch_size * self.spatial_merge;
        if !self.input_width.is_multiple_of(block) || !self.input_height.is_multiple_of(block) {
            return Err(Error::config(
                "input_size",
                format!(
                    "{}x{} does not tile into {block}-pixel token blocks (patch {} x merge {})",
                    self.input_width, self.input_height, self.patch_size, self.spatial_merge
                ),
            ));
        }
        Ok(())
    }

    /// Patch columns per frame.
    pub fn patches_w(&self) -> usize {
        self.input_width / self.patch_size
    }

    /// Patch rows per frame.
    pub fn patches_h(&self) -> usize {
        self.input_height / self.patch_size
    }

    pub fn patches_per_frame(&self) -> usize {
        self.patches_w() * self.patches_h()
    }

    pub fn patches_per_step(&self) -> usize {
        self.patches_per_frame() * self.temporal_patch
    }

    /// Samples in one patch (`patch_size^2 * channels`).
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn samples_per_frame(&self) -> usize {
        self.input_width * self.input_height * self.channels
    }

    pub fn tokens_w(&self) -> usize {
        self.patches_w() / self.spatial_merge
    }

    pub fn tokens_h(&self) -> usize {
        self.patches_h() / self.spatial_merge
    }

    pub fn tokens_per_step(&self) -> usize {
        self.tokens_w() * self.tokens_h()
    }

    /// Token budget attributed to each raw frame. A 448x448 step of two
    /// frames yields 256 tokens, i.e. 128 per frame.
    pub fn tokens_per_frame(&self) -> f64 {
        self.tokens_per_step() as f64 / self.temporal_patch as f64
    }

    /// Patches owned by one token cell.
    pub fn patches_per_token(&self) -> usize {
        self.spatial_merge * self.spatial_merge * self.temporal_patch
    }

    /// Seconds of video covered by one temporal step.
    pub fn step_duration(&self) -> f64 {
        self.temporal_patch as f64 / self.fps
    }

    pub fn wall_time(&self, step: usize) -> f64 {
        step as f64 * self.step_duration()
    }
}

/// Original `{temporal, height, width}` index of a token cell. Assigned before
/// any dropping and never re-indexed afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position3D {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Position3D {
    pub const fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }
}

impl fmt::Display for Position3D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.t, self.h, self.w)
    }
}

/// Row-major `(h, w)` enumeration of the token lattice for one step, with `t = 0`.
pub fn token_coords(geom: &GridGeometry) -> Vec<Position3D> {
    positions_for_step(geom, 0)
}

/// [`token_coords`] stamped with temporal index `t`.
pub fn positions_for_step(geom: &GridGeometry, t: usize) -> Vec<Position3D> {
    let (th, tw) = (geom.tokens_h(), geom.tokens_w());
    let mut out = Vec::with_capacity(th * tw);
    for h in 0..th {
        for w in 0..tw {
            out.push(Position3D::new(t, h, w));
        }
    }
    out
}

/// Token cell index for every patch of a step. Patch indices run over frames
/// first, then patch rows, then patch columns.
pub fn patch_to_token_map(geom: &GridGeometry) -> Vec<usize> {
    let (ph, pw) = (geom.patches_h(), geom.patches_w());
    let merge = geom.spatial_merge;
    let tw = geom.tokens_w();
    let mut map = Vec::with_capacity(geom.patches_per_step());
    for _frame in 0..geom.temporal_patch {
        for r in 0..ph {
            for c in 0..pw {
                map.push((r / merge) * tw + c / merge);
            }
        }
    }
    map
}

/// Raw samples of one frame, either 8-bit or already normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub enum FrameSamples<'a> {
    U8(&'a [u8]),
    F32(&'a [f32]),
}

impl FrameSamples<'_> {
    pub fn len(&self) -> usize {
        match self {
            FrameSamples::U8(s) => s.len(),
            FrameSamples::F32(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pixel blocks of one temporal step, laid out as
/// `[frame][patch_row][patch_col][y][x][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub step: usize,
    geom: GridGeometry,
    values: Vec<f32>,
}

impl PatchGrid {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn patch_count(&self) -> usize {
        self.geom.patches_per_step()
    }

    /// Samples of patch `index` (see [`patch_to_token_map`] for the index order).
    pub fn patch(&self, index: usize) -> &[f32] {
        let len = self.geom.patch_len();
        &self.values[index * len..(index + 1) * len]
    }

    /// Reassembles the step into row-major normalized frames.
    pub fn to_frames(&self) -> Vec<Vec<f32>> {
        let g = &self.geom;
        let row = g.patch_size * g.channels;
        let mut frames = Vec::with_capacity(g.temporal_patch);
        for f in 0..g.temporal_patch {
            let mut frame = vec![0.0f32; g.samples_per_frame()];
            for y in 0..g.input_height {
                let (pr, py) = (y / g.patch_size, y % g.patch_size);
                for pc in 0..g.patches_w() {
                    let patch = (f * g.patches_h() + pr) * g.patches_w() + pc;
                    let src = patch * g.patch_len() + py * row;
                    let dst = (y * g.input_width + pc * g.patch_size) * g.channels;
                    frame[dst..dst + row].copy_from_slice(&self.values[src..src + row]);
                }
            }
            frames.push(frame);
        }
        frames
    }

    /// Reassembles the step back into 8-bit frames. Lossless for grids built
    /// from 8-bit input.
    pub fn to_frames_u8(&self) -> Vec<Vec<u8>> {
        self.to_frames()
            .into_iter()
            .map(|f| f.iter().map(|&v| (v * 255.0).round() as u8).collect())
            .collect()
    }
}

fn u8_lut() -> &'static [f32; 256] {
    static LUT: std::sync::OnceLock<[f32; 256]> = std::sync::OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|i| i as f32 / 255.0))
}

/// Cuts `temporal_patch` raw frames into a [`PatchGrid`]. 8-bit samples are
/// divided by 255; float samples must already lie in `[0, 1]`.
pub fn patchify(frames: &[FrameSamples<'_>], geom: &GridGeometry, step: usize) -> Result<PatchGrid> {
    geom.validate()?;
    if frames.len() != geom.temporal_patch {
        return Err(Error::InputShape(format!(
            "expected {} frames per temporal step, got {}",
            geom.temporal_patch,
            frames.len()
        )));
    }
    let expected = geom.samples_per_frame();
    for (i, frame) in frames.iter().enumerate() {
        if frame.len() != expected {
            return Err(Error::InputShape(format!(
                "frame {i} has {} samples, expected {}x{}x{} = {expected}",
                frame.len(),
                geom.input_width,
                geom.input_height,
                geom.channels
            )));
        }
        if let FrameSamples::F32(s) = frame {
            if let Some(pos) = s.iter().position(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
                return Err(Error::Data(format!(
                    "frame {i} sample {pos} is {} (must be finite and within [0, 1])",
                    s[pos]
                )));
            }
        }
    }

    let row = geom.patch_size * geom.channels;
    let plen = geom.patch_len();
    let (ph, pw) = (geom.patches_h(), geom.patches_w());
    let mut values = vec![0.0f32; geom.patches_per_step() * plen];
    let lut = u8_lut();
    for (f, frame) in frames.iter().enumerate() {
        for y in 0..geom.input_height {
            let (pr, py) = (y / geom.patch_size, y % geom.patch_size);
            let src_row = y * geom.input_width * geom.channels;
            for pc in 0..pw {
                let patch = (f * ph + pr) * pw + pc;
                let dst = patch * plen + py * row;
                let src = src_row + pc * row;
                let out = &mut values[dst..dst + row];
                match frame {
                    FrameSamples::U8(s) => {
                        for (o, &v) in out.iter_mut().zip(&s[src..src + row]) {
                            *o = lut[v as usize];
                        }
                    }
                    FrameSamples::F32(s) => out.copy_from_slice(&s[src..src + row]),
                }
            }
        }
    }
    Ok(PatchGrid {
        step,
        geom: *geom,
        values,
    })
}
