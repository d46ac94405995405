//! Builds the unified condition bundle for every task from one clip.
//!
//! `cargo run --release --example conditions -- [seed]`

use mfm::conditioning::{build_condition, motion_proxy, qualified_tasks};
use mfm::latents::VideoTensor;
use mfm::task::TaskTag;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clip(frames: usize) -> VideoTensor {
    VideoTensor::from_fn(frames, 32, 48, 3, |t, y, x, c| {
        let a = (x as f32 * 0.3 + t as f32 * 0.5 + c as f32).sin();
        let b = (y as f32 * 0.2 - t as f32 * 0.1).cos();
        0.5 * a + 0.3 * b
    })
}

fn main() -> mfm::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0u64);
    let video = clip(33);
    let image = video.frame_tensor(0);
    println!("motion proxy {:.4}", motion_proxy(&video));
    println!("qualified for video: {:?}", qualified_tasks(&video, false));
    for task in TaskTag::ALL {
        let source = if task.is_image() { &image } else { &video };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bundle = build_condition(source, task, "ripples on a pond", &mut rng)?;
        bundle.check_consistency()?;
        let sums = bundle.mask_frame_sums();
        let free = sums.iter().filter(|&&s| s == 0).count();
        let covered = sums.iter().sum::<usize>() as f64 / (bundle.mask.data.len()) as f64;
        println!(
            "{:7} {:>3} frames  {:>3} free  mask {:5.1}%  {:?}\n        {}",
            task.short_name(),
            bundle.frames(),
            free,
            100.0 * covered,
            bundle.layout,
            bundle.prompt
        );
    }
    Ok(())
}
