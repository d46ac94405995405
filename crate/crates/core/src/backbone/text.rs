//! Deterministic stand-in for a text encoder.
//!
//! Each whitespace token is hashed (FNV-1a, 64 bit) to seed a generator that
//! draws a Gaussian vector, normalised to unit length. The empty prompt is
//! the null prompt; the model substitutes its learned null vector for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const MAX_TEXT_LEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum TextEmbedding {
    /// Placeholder for the learned null vector.
    Null,
    /// `len × dim` row-major token vectors.
    Tokens { dim: usize, data: Vec<f64> },
}

impl TextEmbedding {
    pub fn len(&self) -> usize {
        match self {
            TextEmbedding::Null => 1,
            TextEmbedding::Tokens { dim, data } => data.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_null(&self) -> bool {
        matches!(self, TextEmbedding::Null)
    }

    pub fn token(&self, i: usize) -> Option<&[f64]> {
        match self {
            TextEmbedding::Null => None,
            TextEmbedding::Tokens { dim, data } => data.chunks_exact(*dim).nth(i),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unit vector for one token.
pub fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Embeds a prompt; keeps the last `max_len` tokens so the task suffix survives.
pub fn embed_text(prompt: &str, text_dim: usize, max_len: usize) -> TextEmbedding {
    let tokens: Vec<&str> = prompt.split_whitespace().collect();
    if tokens.is_empty() {
        return TextEmbedding::Null;
    }
    let start = tokens.len().saturating_sub(max_len.max(1));
    let data = tokens[start..]
        .iter()
        .flat_map(|t| token_vector(t, text_dim))
        .collect();
    TextEmbedding::Tokens { dim: text_dim, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::with_task_suffix;
    use crate::task::TaskTag;

    #[test]
    fn deterministic_and_unit_norm() {
        let a = embed_text("a red disc moves left", 2048, 64);
        assert_eq!(a, embed_text("a red disc moves left", 2048, 64));
        assert_eq!(a.len(), 5);
        let t = a.token(2).unwrap();
        assert!((t.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.token(0), a.token(0));
        assert_ne!(a.token(0), a.token(1));
    }

    #[test]
    fn null_prompt() {
        assert!(embed_text("", 16, 8).is_null());
        assert!(embed_text("   ", 16, 8).is_null());
        assert_eq!(embed_text("", 16, 8).len(), 1);
    }

    #[test]
    fn task_suffix_changes_final_token() {
        let a = embed_text(&with_task_suffix("a cat", TaskTag::T2V), 64, 64);
        let b = embed_text(&with_task_suffix("a cat", TaskTag::I2V), 64, 64);
        assert_eq!(a.len(), b.len());
        let last = a.len() - 1;
        assert_ne!(a.token(last), b.token(last));
        assert_eq!(a.token(0), b.token(0));
    }

    #[test]
    fn truncation_keeps_the_tail() {
        let long: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let e = embed_text(&long.join(" "), 8, 64);
        assert_eq!(e.len(), 64);
        assert_eq!(e.token(63).unwrap(), token_vector("w99", 8).as_slice());
    }
}
