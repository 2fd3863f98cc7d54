//! Stand-in feature provider for pixel-only inputs.
//!
//! Real embeddings come from an external encoder through the TKE1 file format.
//! When only frames are available, every token cell gets a pseudo-embedding:
//! for each patch it owns (frames in time order, then merged rows, then merged
//! columns) the per-channel mean of the normalized samples, centred on 0.5.
//! Centring keeps uniformly dark and uniformly bright content anti-correlated
//! under cosine similarity.

use crate::geometry::PatchGrid;
use crate::redundancy::TokenGrid;

/// Width of the pseudo-embedding produced for `grid`'s geometry.
pub fn pseudo_feature_dim(grid: &PatchGrid) -> usize {
    let g = grid.geometry();
    g.patches_per_token() * g.channels
}

pub fn pseudo_features(grid: &PatchGrid) -> TokenGrid {
    let g = grid.geometry();
    let (th, tw) = (g.tokens_h(), g.tokens_w());
    let (ph, pw) = (g.patches_h(), g.patches_w());
    let merge = g.spatial_merge;
    let ch = g.channels;
    let dim = pseudo_feature_dim(grid);
    let pixels = (g.patch_size * g.patch_size) as f64;

    let mut values = Vec::with_capacity(th * tw * dim);
    let mut sums = vec![0.0f64; ch];
    for h in 0..th {
        for w in 0..tw {
            for f in 0..g.temporal_patch {
                for dr in 0..merge {
                    for dc in 0..merge {
                        let index = (f * ph + h * merge + dr) * pw + w * merge + dc;
                        sums.fill(0.0);
                        for px in grid.patch(index).chunks_exact(ch) {
                            for (s, &v) in sums.iter_mut().zip(px) {
                                *s += v as f64;
                            }
                        }
                        values.extend(sums.iter().map(|s| (s / pixels - 0.5) as f32));
                    }
                }
            }
        }
    }
    TokenGrid::new(grid.step, th, tw, dim, values).expect("pseudo-features are finite by construction")
}
