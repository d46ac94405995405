//! Overfits the toy model on eight synthetic clips and samples one back.
//!
//! `cargo run --release --example overfit -- [steps] [batch] [lr] [cfg]`

use std::time::Instant;

use mfm::backbone::{MfmModel, ModelConfig};
use mfm::conditioning::build_condition;
use mfm::flow::{euler_sample, SamplerConfig};
use mfm::task::TaskTag;
use mfm::trainer::{make_synthetic_corpus, train, CorpusSpec, RecipeStage, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn psnr(a: &[f32], b: &[f32]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| ((x - y) as f64 / 2.0).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

fn main() -> mfm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (steps, batch, lr, cfg_scale) = (arg(1, 2000.0) as usize, arg(2, 4.0) as usize, arg(3, 5e-4), arg(4, 9.0));

    let spec = CorpusSpec { images: 0, videos: 8, ..CorpusSpec::default() };
    let corpus = make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let config = ModelConfig::toy();
    let codec = config.codec()?;
    for item in &corpus {
        let back = codec.decode(&codec.encode(&item.clip)?, item.clip.frames)?;
        println!("codec psnr {:6.2} dB  {}", psnr(&back.data, &item.clip.data), item.caption);
    }

    let model = MfmModel::new(&config, 0)?;
    let stage = RecipeStage::new("overfit", (5, 32, 32), 0.0, batch, lr, steps);
    let start = Instant::now();
    let out = train(&[stage], &corpus, model, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("trained {steps} steps in {:.1}s", start.elapsed().as_secs_f64());
    let losses = out.step_losses();
    for w in losses.chunks(100) {
        print!("{:.4} ", w.iter().sum::<f64>() / w.len() as f64);
    }
    println!();
    println!("loss ratio {:.4}", out.loss_ratio(100).unwrap_or(f64::NAN));

    let item = &corpus[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bundle = build_condition(&item.clip, TaskTag::I2V, &item.caption, &mut rng)?;
    let shape = codec.latent_shape(5, 32, 32)?;
    for scale in [1.0, cfg_scale] {
        let cfg = SamplerConfig { steps: 50, guidance_scale: scale };
        let latent = euler_sample(&out.model, &bundle, &bundle.with_null_prompt(), &cfg, shape, &mut rng)?;
        let video = codec.decode(&latent, 5)?;
        println!("cfg {scale}: sample psnr {:.2} dB", psnr(&video.data, &item.clip.data));
    }
    Ok(())
}
