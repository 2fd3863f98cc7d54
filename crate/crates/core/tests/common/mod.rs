//! Random clip generators and naive reference implementations shared by the
//! integration tests. The oracles index raw frames and embeddings directly and
//! never go through the library's patch layout or sorting code.

#![allow(dead_code)]

use std::sync::Arc;

use dtd_core::io::{write_masks, write_slim, write_timeline};
use dtd_core::{
    patchify, FrameSamples, GridGeometry, PatchGrid, SimilarityKind, SlimTokenStream, StepInput, StepOutput, TokenGrid,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random clip with raw frames and matching embeddings.
#[derive(Debug, Clone)]
pub struct Clip {
    pub geom: GridGeometry,
    /// `frames[step][frame]` row-major 8-bit samples.
    pub frames: Vec<Vec<Vec<u8>>>,
    pub tokens: Vec<TokenGrid>,
}

impl Clip {
    pub fn steps(&self) -> usize {
        self.frames.len()
    }

    pub fn patch_grid(&self, step: usize) -> PatchGrid {
        let samples: Vec<_> = self.frames[step].iter().map(|f| FrameSamples::U8(f)).collect();
        patchify(&samples, &self.geom, step).unwrap()
    }

    pub fn pixel_inputs(&self) -> Vec<StepInput> {
        (0..self.steps())
            .map(|s| StepInput::pixels(self.patch_grid(s)))
            .collect()
    }

    pub fn token_inputs(&self) -> Vec<StepInput> {
        self.tokens.iter().cloned().map(StepInput::tokens).collect()
    }

    pub fn both_inputs(&self) -> Vec<StepInput> {
        (0..self.steps())
            .map(|s| StepInput {
                pixels: Some(Arc::new(self.patch_grid(s))),
                tokens: Some(Arc::new(self.tokens[s].clone())),
            })
            .collect()
    }
}

/// Geometry with a token lattice of at most `max_side x max_side`.
pub fn random_geometry(rng: &mut impl Rng, max_side: usize) -> GridGeometry {
    let patch_size = rng.gen_range(1..=4);
    let spatial_merge = rng.gen_range(1..=2);
    let th = rng.gen_range(1..=max_side);
    let tw = rng.gen_range(1..=max_side);
    GridGeometry {
        input_width: tw * spatial_merge * patch_size,
        input_height: th * spatial_merge * patch_size,
        channels: if rng.gen_bool(0.5) { 1 } else { 3 },
        patch_size,
        spatial_merge,
        temporal_patch: rng.gen_range(1..=2),
        fps: [0.5, 1.0, 2.0][rng.gen_range(0..3)],
    }
}

fn mutate_frame(rng: &mut impl Rng, prev: &[u8], geom: &GridGeometry) -> Vec<u8> {
    let mut out = prev.to_vec();
    let block = geom.patch_size;
    let (bw, bh) = (geom.input_width / block, geom.input_height / block);
    for by in 0..bh {
        for bx in 0..bw {
            let roll: f64 = rng.gen();
            if roll < 0.45 {
                continue;
            }
            let small = roll < 0.75;
            for y in by * block..(by + 1) * block {
                for x in bx * block..(bx + 1) * block {
                    for c in 0..geom.channels {
                        let i = (y * geom.input_width + x) * geom.channels + c;
                        out[i] = if small {
                            out[i].saturating_add_signed(rng.gen_range(-6i8..=6))
                        } else {
                            rng.gen()
                        };
                    }
                }
            }
        }
    }
    out
}

fn random_embedding(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    if rng.gen_bool(0.05) {
        vec![0.0; dim]
    } else {
        (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }
}

/// Random clip over a random geometry: `T <= max_steps`, lattice up to
/// `max_side x max_side`, embedding width up to `max_dim`. Consecutive steps
/// share many identical or nearly identical regions so every selection rule
/// sees ties and near-threshold scores.
pub fn random_clip(rng: &mut impl Rng, max_steps: usize, max_side: usize, max_dim: usize) -> Clip {
    let geom = random_geometry(rng, max_side);
    let steps = rng.gen_range(1..=max_steps);
    let dim = rng.gen_range(1..=max_dim);
    let cells = geom.tokens_per_step();

    let mut frames: Vec<Vec<Vec<u8>>> = Vec::with_capacity(steps);
    let mut last: Vec<u8> = (0..geom.samples_per_frame()).map(|_| rng.gen()).collect();
    for s in 0..steps {
        let mut step = Vec::with_capacity(geom.temporal_patch);
        for f in 0..geom.temporal_patch {
            if s > 0 || f > 0 {
                last = mutate_frame(rng, &last, &geom);
            }
            step.push(last.clone());
        }
        frames.push(step);
    }

    let mut tokens: Vec<TokenGrid> = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut values = Vec::with_capacity(cells * dim);
        for c in 0..cells {
            let prev = tokens.last().map(|t| &t.values()[c * dim..(c + 1) * dim]);
            let roll: f64 = rng.gen();
            match prev {
                Some(p) if roll < 0.3 => values.extend_from_slice(p),
                Some(p) if roll < 0.6 => values.extend(p.iter().map(|v| v + rng.gen_range(-0.3f32..0.3))),
                _ => values.extend(random_embedding(rng, dim)),
            }
        }
        tokens.push(TokenGrid::new(s, geom.tokens_h(), geom.tokens_w(), dim, values).unwrap());
    }
    Clip { geom, frames, tokens }
}

// ---------------------------------------------------------------------------
// Oracles

/// Per-cell pixel score from raw frames: for each patch owned by the cell,
/// the mean absolute difference of `u8 / 255` samples, then the maximum.
pub fn oracle_pixel_scores(geom: &GridGeometry, prev: &[Vec<u8>], cur: &[Vec<u8>]) -> Vec<f32> {
    let ps = geom.patch_size;
    let m = geom.spatial_merge;
    let (th, tw) = (geom.input_height / (ps * m), geom.input_width / (ps * m));
    let n = (ps * ps * geom.channels) as f64;
    let mut scores = Vec::with_capacity(th * tw);
    for h in 0..th {
        for w in 0..tw {
            let mut worst = 0.0f64;
            for f in 0..geom.temporal_patch {
                for pr in h * m..(h + 1) * m {
                    for pc in w * m..(w + 1) * m {
                        let mut sum = 0.0f64;
                        for y in pr * ps..(pr + 1) * ps {
                            for x in pc * ps..(pc + 1) * ps {
                                for c in 0..geom.channels {
                                    let i = (y * geom.input_width + x) * geom.channels + c;
                                    let a = prev[f][i] as f32 / 255.0;
                                    let b = cur[f][i] as f32 / 255.0;
                                    sum += (a - b).abs() as f64;
                                }
                            }
                        }
                        worst = worst.max(sum / n);
                    }
                }
            }
            scores.push(worst as f32);
        }
    }
    scores
}

pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32
    }
}

pub fn oracle_feature_scores(prev: &TokenGrid, cur: &TokenGrid) -> Vec<f32> {
    let mut scores = Vec::new();
    for h in 0..cur.height() {
        for w in 0..cur.width() {
            scores.push(oracle_cosine(prev.embedding(h, w), cur.embedding(h, w)));
        }
    }
    scores
}

pub fn oracle_threshold(kind: SimilarityKind, scores: &[f32], tau: f32) -> Vec<bool> {
    scores
        .iter()
        .map(|&s| match kind {
            SimilarityKind::Pixel => s < tau,
            SimilarityKind::Feature => s > tau,
        })
        .collect()
}

fn more_similar(kind: SimilarityKind, a: f32, b: f32) -> bool {
    match kind {
        SimilarityKind::Pixel => a < b,
        SimilarityKind::Feature => a > b,
    }
}

/// Greedy selection: `k` times, drop the most similar remaining cell; a linear
/// scan with strict comparison keeps the earliest index among ties.
fn greedy_pick(kind: SimilarityKind, scores: &[f32], k: usize) -> Vec<bool> {
    let mut dropped = vec![false; scores.len()];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if dropped[i] {
                continue;
            }
            if best.is_none_or(|b| more_similar(kind, scores[i], scores[b])) {
                best = Some(i);
            }
        }
        dropped[best.expect("k <= cell count")] = true;
    }
    dropped
}

pub fn oracle_frame_aware(kind: SimilarityKind, scores: &[f32], ratio: f64) -> Vec<bool> {
    let k = (ratio * scores.len() as f64).floor() as usize;
    greedy_pick(kind, scores, k)
}

/// Global selection over steps `1..T`; returns one mask per given step.
pub fn oracle_video_aware(kind: SimilarityKind, per_step: &[Vec<f32>], ratio: f64) -> Vec<Vec<bool>> {
    let pooled: Vec<f32> = per_step.iter().flatten().copied().collect();
    let k = (ratio * pooled.len() as f64).floor() as usize;
    let flat = greedy_pick(kind, &pooled, k);
    let mut out = Vec::new();
    let mut offset = 0;
    for s in per_step {
        out.push(flat[offset..offset + s.len()].to_vec());
        offset += s.len();
    }
    out
}

// ---------------------------------------------------------------------------
// Output comparison

/// Byte serialization of everything observable in a run: masks, fragments,
/// timeline, trigger list, evictions and memory occupancy.
pub fn output_bytes(outputs: &[StepOutput]) -> Vec<u8> {
    let mut out = Vec::new();
    let masks: Vec<_> = outputs.iter().map(|o| o.mask.clone()).collect();
    write_masks(&mut out, &masks).unwrap();
    for o in outputs {
        write_slim(&mut out, &o.fragment).unwrap();
        if let Some(f) = &o.field {
            for s in &f.scores {
                out.extend_from_slice(&s.to_bits().to_le_bytes());
            }
        }
        if let Some(t) = &o.trigger {
            out.extend_from_slice(format!("trigger {} {} {}\n", t.step, t.wall_time, t.drop_ratio).as_bytes());
        }
        out.extend_from_slice(format!("evicted {:?} memory {}\n", o.evicted, o.memory_tokens).as_bytes());
    }
    let entries: Vec<_> = outputs.iter().map(|o| o.entry).collect();
    write_timeline(&mut out, &entries).unwrap();
    out
}

pub fn concat_fragments(outputs: &[StepOutput]) -> SlimTokenStream {
    let mut s = SlimTokenStream::empty(outputs.first().map_or(0, |o| o.fragment.dim));
    for o in outputs {
        s.extend_from(&o.fragment).unwrap();
    }
    s
}

/// Uniform 8-bit frame of `geom`.
pub fn flat_frame(geom: &GridGeometry, value: u8) -> Vec<u8> {
    vec![value; geom.samples_per_frame()]
}

/// Patch grid of a step whose frames are all `value`.
pub fn flat_step(geom: &GridGeometry, step: usize, value: u8) -> PatchGrid {
    let f = flat_frame(geom, value);
    let samples: Vec<_> = (0..geom.temporal_patch).map(|_| FrameSamples::U8(&f)).collect();
    patchify(&samples, geom, step).unwrap()
}
