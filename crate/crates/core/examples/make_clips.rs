//! Writes clip fixtures for the command-line tools.
//!
//! `cargo run --release --example make_clips -- <dir> [count]`
//!
//! Fills `<dir>/bench/` with `count` sharp moving 97-frame clips and two
//! clips the filters reject (one static, one faint), and writes a 17-frame
//! corpus clip to `<dir>/short.video` for `build-conditions`.

use std::path::PathBuf;

use mfm::bench::{probe_clip, ProbeClip};
use mfm::container::save_video;
use mfm::trainer::{make_synthetic_corpus, CorpusSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mfm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let root = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("clips"));
    let count: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let dir = root.join("bench");
    std::fs::create_dir_all(&dir)?;

    for i in 0..count {
        let clip = probe_clip(ProbeClip::SharpMoving, 97, 16, 16, 2, i);
        save_video(dir.join(format!("moving_{i:03}.video")), &clip)?;
        std::fs::write(dir.join(format!("moving_{i:03}.txt")), format!("a checkerboard sliding right, phase {i}"))?;
    }
    save_video(dir.join("static.video"), &probe_clip(ProbeClip::SharpStatic, 97, 16, 16, 2, 0))?;
    let mut soft = probe_clip(ProbeClip::SharpMoving, 97, 16, 16, 8, 0);
    for v in &mut soft.data {
        *v *= 0.05;
    }
    save_video(dir.join("faint.video"), &soft)?;

    let spec = CorpusSpec { images: 0, videos: 1, frames: 17, ..CorpusSpec::default() };
    let item = &make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(0))?[0];
    let short = root.join("short.video");
    save_video(&short, &item.clip)?;
    println!("wrote {count} moving clips, 2 rejects to {} and {} ({})", dir.display(), short.display(), item.caption);
    Ok(())
}
