//! Three-axis rotary position embedding.
//!
//! A head of width `d` is split into contiguous channel blocks of widths
//! `d/4`, `3d/8`, `3d/8` rotated by the temporal, height and width
//! coordinate respectively. Within a block of width `n`, pair `i` (channels
//! `2i, 2i+1`) turns by `p · base^(-2i/n)`.

use crate::error::{MfmError, Result};
use crate::tape::RotaryTable;

pub const ROPE_BASE: f64 = 10_000.0;

/// Channel widths for the `(τ, η, ω)` axes.
pub fn rope_split(head_dim: usize) -> Result<(usize, usize, usize)> {
    if head_dim == 0 || head_dim % 16 != 0 {
        return Err(MfmError::Dimension(format!(
            "head_dim {head_dim} must be a positive multiple of 16"
        )));
    }
    Ok((head_dim * 2 / 8, head_dim * 3 / 8, head_dim * 3 / 8))
}

/// Rotation angle of every channel pair for one position.
fn angles(position: (usize, usize, usize), head_dim: usize) -> Result<Vec<f64>> {
    let (a, b, c) = rope_split(head_dim)?;
    let mut out = Vec::with_capacity(head_dim / 2);
    for (width, p) in [(a, position.0), (b, position.1), (c, position.2)] {
        for i in 0..width / 2 {
            let freq = ROPE_BASE.powf(-2.0 * i as f64 / width as f64);
            out.push(p as f64 * freq);
        }
    }
    Ok(out)
}

/// Rotates one query or key vector to its 3D position.
pub fn rope3d(v: &[f64], position: (usize, usize, usize), head_dim: usize) -> Result<Vec<f64>> {
    if v.len() != head_dim {
        return Err(MfmError::shape(head_dim, v.len()));
    }
    let theta = angles(position, head_dim)?;
    let mut out = vec![0.0; head_dim];
    for (p, &a) in theta.iter().enumerate() {
        let (s, c) = a.sin_cos();
        let (x0, x1) = (v[2 * p], v[2 * p + 1]);
        out[2 * p] = x0 * c - x1 * s;
        out[2 * p + 1] = x0 * s + x1 * c;
    }
    Ok(out)
}

/// Row-major `(τ, η, ω)` positions of a `t×h×w` latent grid.
pub fn token_positions(t: usize, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(t * h * w);
    for a in 0..t {
        for b in 0..h {
            for c in 0..w {
                out.push((a, b, c));
            }
        }
    }
    out
}

/// Rotation table for a token sequence, consumed by [`crate::tape::Tape::rotary`].
pub fn rotary_table(positions: &[(usize, usize, usize)], head_dim: usize) -> Result<RotaryTable> {
    let pairs = head_dim / 2;
    let mut cos = Vec::with_capacity(positions.len() * pairs);
    let mut sin = Vec::with_capacity(positions.len() * pairs);
    for &p in positions {
        for a in angles(p, head_dim)? {
            let (s, c) = a.sin_cos();
            cos.push(c);
            sin.push(s);
        }
    }
    Ok(RotaryTable { cos, sin, pairs })
}
