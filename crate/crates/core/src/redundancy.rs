//! Temporal redundancy between consecutive, spatially aligned cells and the
//! drop-mask selection rules built on top of it.
//!
//! Pixel similarity is the mean absolute difference of normalized samples, so
//! smaller means more alike. Feature similarity is cosine similarity, so larger
//! means more alike. [`SimilarityKind`] hides that direction from the ranked
//! selection modes.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{patch_to_token_map, PatchGrid, Position3D};

/// Per-step token embeddings, row-major `(h, w, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub step: usize,
    height: usize,
    width: usize,
    dim: usize,
    values: Vec<f32>,
}

impl TokenGrid {
    pub fn new(step: usize, height: usize, width: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::InputShape(format!(
                "token grid dimensions must be positive, got {height}x{width}x{dim}"
            )));
        }
        if values.len() != height * width * dim {
            return Err(Error::InputShape(format!(
                "token grid {height}x{width}x{dim} needs {} values, got {}",
                height * width * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (cell, d) = (i / dim, i % dim);
            return Err(Error::Data(format!(
                "non-finite embedding value {} at (t={step}, h={}, w={}, d={d})",
                values[i],
                cell / width,
                cell % width
            )));
        }
        Ok(Self {
            step,
            height,
            width,
            dim,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn embedding(&self, h: usize, w: usize) -> &[f32] {
        let i = (h * self.width + w) * self.dim;
        &self.values[i..i + self.dim]
    }

    /// Multiplies every embedding by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.step,
            self.height,
            self.width,
            self.dim,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilarityKind {
    Pixel,
    Feature,
}

impl SimilarityKind {
    /// Orders scores from most to least similar.
    pub fn rank(self, a: f32, b: f32) -> Ordering {
        match self {
            SimilarityKind::Pixel => a.total_cmp(&b),
            SimilarityKind::Feature => b.total_cmp(&a),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Pixel => "pixel",
            SimilarityKind::Feature => "feature",
        }
    }
}

/// Per-cell similarity between one step and its predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityField {
    pub step: usize,
    pub height: usize,
    pub width: usize,
    pub kind: SimilarityKind,
    pub scores: Vec<f32>,
}

impl SimilarityField {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn score(&self, h: usize, w: usize) -> f32 {
        self.scores[h * self.width + w]
    }
}

/// Keep/drop decision per token cell; `true` means DROP.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DropMask {
    pub step: usize,
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl DropMask {
    pub fn all_keep(step: usize, height: usize, width: usize) -> Self {
        Self {
            step,
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn cells(&self) -> usize {
        self.bits.len()
    }

    pub fn dropped(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn kept(&self) -> usize {
        self.cells() - self.dropped()
    }

    pub fn is_dropped(&self, h: usize, w: usize) -> bool {
        self.bits[h * self.width + w]
    }
}

/// Retained tokens paired with their original positions, sorted by `(t, h, w)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlimTokenStream {
    pub dim: usize,
    pub positions: Vec<Position3D>,
    /// `positions.len() * dim` values.
    pub embeddings: Vec<f32>,
    /// Temporal steps consumed to produce this stream, including fully dropped ones.
    pub source_steps: usize,
}

impl SlimTokenStream {
    pub fn empty(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Position3D, &[f32])> + '_ {
        self.positions
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, &self.embeddings[i * self.dim..(i + 1) * self.dim]))
    }

    /// Appends another stream. Positions must continue the sort order.
    pub fn extend_from(&mut self, other: &SlimTokenStream) -> Result<()> {
        if self.is_empty() {
            self.dim = other.dim;
        } else if !other.is_empty() && other.dim != self.dim {
            return Err(Error::InputShape(format!(
                "cannot concatenate streams of width {} and {}",
                self.dim, other.dim
            )));
        }
        self.positions.extend_from_slice(&other.positions);
        self.embeddings.extend_from_slice(&other.embeddings);
        self.source_steps += other.source_steps;
        Ok(())
    }

    pub fn is_sorted(&self) -> bool {
        self.positions.windows(2).all(|w| w[0] < w[1])
    }
}

fn check_consecutive(prev: usize, cur: usize) -> Result<()> {
    if prev + 1 != cur {
        return Err(Error::Sequence {
            expected: prev + 1,
            got: cur,
        });
    }
    Ok(())
}

/// Mean absolute difference of every patch against its predecessor, in patch
/// index order.
pub fn patch_distances(prev: &PatchGrid, cur: &PatchGrid) -> Result<Vec<f64>> {
    if prev.geometry() != cur.geometry() {
        return Err(Error::InputShape(format!(
            "patch grids of steps {} and {} have different geometry",
            prev.step, cur.step
        )));
    }
    let plen = cur.geometry().patch_len();
    let out = prev
        .values()
        .par_chunks_exact(plen)
        .zip(cur.values().par_chunks_exact(plen))
        .map(|(a, b)| {
            let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum();
            sum / plen as f64
        })
        .collect();
    Ok(out)
}

/// Pixel-level redundancy. A token cell scores the largest per-patch distance
/// among the patches it owns, so it is only as redundant as its least
/// redundant patch.
pub fn pixel_similarity(prev: &PatchGrid, cur: &PatchGrid) -> Result<SimilarityField> {
    check_consecutive(prev.step, cur.step)?;
    let distances = patch_distances(prev, cur)?;
    let geom = cur.geometry();
    let mut cell = vec![0.0f64; geom.tokens_per_step()];
    for (d, &t) in distances.iter().zip(&patch_to_token_map(geom)) {
        if *d > cell[t] {
            cell[t] = *d;
        }
    }
    Ok(SimilarityField {
        step: cur.step,
        height: geom.tokens_h(),
        width: geom.tokens_w(),
        kind: SimilarityKind::Pixel,
        scores: cell.into_iter().map(|d| d as f32).collect(),
    })
}

/// Cosine similarity of two embeddings. Two zero vectors count as identical,
/// a zero vector against a non-zero one as orthogonal.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32,
    }
}

/// Feature-level redundancy: per-cell cosine similarity against the previous step.
pub fn feature_similarity(prev: &TokenGrid, cur: &TokenGrid) -> Result<SimilarityField> {
    check_consecutive(prev.step, cur.step)?;
    if prev.height != cur.height || prev.width != cur.width || prev.dim != cur.dim {
        return Err(Error::InputShape(format!(
            "token grids {}x{}x{} and {}x{}x{} are not aligned",
            prev.height, prev.width, prev.dim, cur.height, cur.width, cur.dim
        )));
    }
    let scores = prev
        .values
        .par_chunks_exact(cur.dim)
        .zip(cur.values.par_chunks_exact(cur.dim))
        .map(|(a, b)| cosine(a, b))
        .collect();
    Ok(SimilarityField {
        step: cur.step,
        height: cur.height,
        width: cur.width,
        kind: SimilarityKind::Feature,
        scores,
    })
}

pub(crate) fn check_tau(kind: SimilarityKind, tau: f32) -> Result<()> {
    match kind {
        SimilarityKind::Pixel if !(tau.is_finite() && tau >= 0.0) => Err(Error::config(
            "tau_pixel",
            format!("must be finite and non-negative, got {tau}"),
        )),
        SimilarityKind::Feature if !(tau.is_finite() && (-1.0..=1.0).contains(&tau)) => {
            Err(Error::config("tau_feat", format!("must lie in [-1, 1], got {tau}")))
        }
        _ => Ok(()),
    }
}

pub(crate) fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(
            "target_ratio",
            format!("must lie in [0, 1], got {ratio}"),
        ));
    }
    Ok(())
}

/// Drops cells strictly below `tau` (pixel) or strictly above it (feature).
pub fn threshold_mask(field: &SimilarityField, tau: f32) -> Result<DropMask> {
    check_tau(field.kind, tau)?;
    let bits = field
        .scores
        .iter()
        .map(|&s| match field.kind {
            SimilarityKind::Pixel => s < tau,
            SimilarityKind::Feature => s > tau,
        })
        .collect();
    Ok(DropMask {
        step: field.step,
        height: field.height,
        width: field.width,
        bits,
    })
}

/// Number of cells a ranked mode drops out of `cells` at `ratio`.
pub fn ranked_budget(ratio: f64, cells: usize) -> usize {
    ((ratio * cells as f64).floor() as usize).min(cells)
}

/// Drops a fixed fraction of each step: the most similar cells first, earlier
/// `(h, w)` first among equal scores.
pub fn frame_aware_mask(field: &SimilarityField, ratio: f64) -> Result<DropMask> {
    check_ratio(ratio)?;
    let mut order: Vec<usize> = (0..field.cells()).collect();
    order.sort_by(|&a, &b| field.kind.rank(field.scores[a], field.scores[b]).then(a.cmp(&b)));
    let mut mask = DropMask::all_keep(field.step, field.height, field.width);
    for &i in &order[..ranked_budget(ratio, field.cells())] {
        mask.bits[i] = true;
    }
    Ok(mask)
}

/// Pools every cell of steps `1..T` and drops the globally most similar
/// `floor(ratio * total)` of them, earlier `(t, h, w)` first among ties.
/// `fields` must start at step 1; step 0 is never part of the pool.
pub fn video_aware_masks(fields: &[SimilarityField], ratio: f64) -> Result<Vec<DropMask>> {
    check_ratio(ratio)?;
    let Some(first) = fields.first() else {
        return Ok(Vec::new());
    };
    for (i, f) in fields.iter().enumerate() {
        if f.kind != first.kind || f.height != first.height || f.width != first.width {
            return Err(Error::InputShape(format!(
                "similarity field for step {} ({} {}x{}) differs from step {} ({} {}x{})",
                f.step,
                f.kind.as_str(),
                f.height,
                f.width,
                first.step,
                first.kind.as_str(),
                first.height,
                first.width
            )));
        }
        if f.step != first.step + i {
            return Err(Error::InputShape(format!(
                "similarity fields are not contiguous: expected step {}, got {}",
                first.step + i,
                f.step
            )));
        }
        if f.scores.len() != f.cells() {
            return Err(Error::InputShape(format!(
                "similarity field for step {} holds {} scores for {} cells",
                f.step,
                f.scores.len(),
                f.cells()
            )));
        }
    }
    let cells = first.cells();
    let kind = first.kind;
    let mut pool: Vec<(usize, usize)> = (0..fields.len())
        .flat_map(|t| (0..cells).map(move |c| (t, c)))
        .collect();
    // (t, c) pairs are generated in ascending order, so a stable sort keeps ties ordered.
    pool.sort_by(|a, b| kind.rank(fields[a.0].scores[a.1], fields[b.0].scores[b.1]));

    let mut masks: Vec<DropMask> = fields
        .iter()
        .map(|f| DropMask::all_keep(f.step, f.height, f.width))
        .collect();
    for &(t, c) in &pool[..ranked_budget(ratio, pool.len())] {
        masks[t].bits[c] = true;
    }
    Ok(masks)
}

/// Un-drops the least similar cells until at least `min_keep` cells survive.
pub fn enforce_min_keep(mask: &mut DropMask, field: &SimilarityField, min_keep: usize) {
    let target = min_keep.min(mask.cells());
    let kept = mask.kept();
    if kept >= target {
        return;
    }
    let mut dropped: Vec<usize> = (0..mask.cells()).filter(|&i| mask.bits[i]).collect();
    dropped.sort_by(|&a, &b| field.kind.rank(field.scores[b], field.scores[a]).then(a.cmp(&b)));
    for &i in &dropped[..target - kept] {
        mask.bits[i] = false;
    }
}

/// Keeps the cells the mask does not drop, each tagged with its original
/// position. Embeddings are copied unmodified.
pub fn apply_mask(tokens: &TokenGrid, positions: &[Position3D], mask: &DropMask) -> Result<SlimTokenStream> {
    if mask.height != tokens.height || mask.width != tokens.width || mask.bits.len() != tokens.cells() {
        return Err(Error::InputShape(format!(
            "mask lattice {}x{} does not match token lattice {}x{}",
            mask.height, mask.width, tokens.height, tokens.width
        )));
    }
    if positions.len() != tokens.cells() {
        return Err(Error::InputShape(format!(
            "{} positions supplied for {} token cells",
            positions.len(),
            tokens.cells()
        )));
    }
    let kept = mask.kept();
    let mut out = SlimTokenStream {
        dim: tokens.dim,
        positions: Vec::with_capacity(kept),
        embeddings: Vec::with_capacity(kept * tokens.dim),
        source_steps: 1,
    };
    for (i, (&drop, emb)) in mask.bits.iter().zip(tokens.values.chunks_exact(tokens.dim)).enumerate() {
        if !drop {
            out.positions.push(positions[i]);
            out.embeddings.extend_from_slice(emb);
        }
    }
    Ok(out)
}

/// Fraction of the mask's cells that are dropped.
pub fn drop_ratio(mask: &DropMask) -> f64 {
    ratio_of(mask.dropped(), mask.cells())
}

pub(crate) fn ratio_of(dropped: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        dropped as f64 / total as f64
    }
}
