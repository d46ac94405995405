//! 3D rotary embeddings: channel split and relative-position invariance.
//!
//! `cargo run --release --example rope`

use mfm::backbone::{rope3d, rope_split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> mfm::Result<()> {
    for hd in [16, 64, 128] {
        println!("head_dim {hd:>3}: (t, h, w) channels {:?}", rope_split(hd)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (p, r) = ((2, 5, 7), (4, 1, 9));
    let base = dot(&rope3d(&q, p, 64)?, &rope3d(&k, r, 64)?);
    let mut worst = 0.0f64;
    for d in [(1, 0, 0), (0, 3, 0), (0, 0, 11), (7, 13, 29)] {
        let shift = |x: (usize, usize, usize)| (x.0 + d.0, x.1 + d.1, x.2 + d.2);
        let moved = dot(&rope3d(&q, shift(p), 64)?, &rope3d(&k, shift(r), 64)?);
        worst = worst.max((moved - base).abs());
        println!("shift {d:?}: <q,k> {moved:+.12} (unshifted {base:+.12})");
    }
    println!("largest discrepancy {worst:.2e}");
    let apart = dot(&rope3d(&q, (2, 5, 7), 64)?, &rope3d(&k, (2, 5, 8), 64)?);
    println!("moving k one column changes <q,k> to {apart:+.12}");
    Ok(())
}
