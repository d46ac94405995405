//! Filters probe clips, builds a small benchmark on disk and scores outputs.
//!
//! `cargo run --release --example benchmark -- [out_dir]`

use mfm::bench::{blur_score, build_benchmark, evaluate, filter_indices, passes_filters, probe_clip, psnr, ssim, BenchConfig, ProbeClip};
use mfm::latents::VideoTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mfm::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("mfm-bench-example"));
    let cfg = BenchConfig { per_task_count: 3, ..BenchConfig::default() };

    let mut clips: Vec<VideoTensor> = (0..4).map(|i| probe_clip(ProbeClip::SharpMoving, 97, 8, 8, 2, i)).collect();
    clips.push(probe_clip(ProbeClip::SharpStatic, 97, 8, 8, 2, 0));
    let mut blurred = clips[0].clone();
    blurred.data.iter_mut().for_each(|v| *v *= 0.02);
    clips.push(blurred);
    for (i, c) in clips.iter().enumerate() {
        println!("clip {i}: blur {:8.1}  kept {}", blur_score(&c.frame_tensor(0)), passes_filters(c, &cfg));
    }
    let kept: Vec<VideoTensor> = filter_indices(&clips, &cfg).into_iter().map(|i| clips[i].clone()).collect();
    let captions: Vec<String> = (0..kept.len()).map(|i| format!("checkerboard drifting {i}")).collect();
    let bench = build_benchmark(&kept, &captions, &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    bench.write(&out)?;
    println!("{} samples written to {}", bench.samples.len(), out.display());

    // the benchmark scored against itself
    let report = evaluate(&out, &out)?;
    let (p, s) = report.mean();
    println!("self-evaluation mean psnr {p} ssim {s:.4}");

    let truth = &bench.samples[0].ground_truth;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for noise in [0.01f32, 0.05, 0.2] {
        let mut noisy = truth.clone();
        noisy.data.iter_mut().for_each(|v| *v = (*v + rng.random_range(-noise..noise)).clamp(-1.0, 1.0));
        println!("noise {noise:.2}: psnr {:6.2} dB  ssim {:.4}", psnr(truth, &noisy)?, ssim(truth, &noisy)?);
    }
    Ok(())
}
