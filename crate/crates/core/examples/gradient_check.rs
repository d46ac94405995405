//! Compares tape gradients of the flow loss with central differences.
//!
//! `cargo run --release --example gradient_check`

use mfm::backbone::{MfmModel, ModelConfig, ScalarConditions};
use mfm::conditioning::build_condition;
use mfm::flow::{flow_loss, flow_sample_at};
use mfm::latents::{LatentGrid, VideoTensor};
use mfm::task::TaskTag;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mfm::Result<()> {
    let mut model = MfmModel::new(&ModelConfig::toy(), 0)?;
    // zero-initialised outputs would hide most gradients
    model.params.perturb(0.05, &mut ChaCha8Rng::seed_from_u64(1));
    let clip = VideoTensor::from_fn(5, 32, 32, 3, |t, y, x, c| ((x + t) as f32 * 0.4 + c as f32).sin() * 0.4 + (y as f32 * 0.3).cos() * 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bundle = build_condition(&clip, TaskTag::I2V, "a drifting wave", &mut rng)?;
    let codec = model.config.codec()?;
    let x0 = codec.encode(&clip)?;
    let (t, h, w, c) = x0.dims();
    let sample = flow_sample_at(&x0, &LatentGrid::randn(t, h, w, c, &mut rng), 0.37)?;
    let scalars = ScalarConditions::new(sample.time, 0.3)?;
    let loss = |m: &MfmModel| -> mfm::Result<f64> { flow_loss(&m.forward(&sample.xt, &bundle, scalars)?, &sample) };

    let (value, grads) = model.loss_and_gradients(&sample.xt, &sample.v_target, &bundle, scalars)?;
    println!("loss {value:.6}");
    let ids: Vec<_> = model.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut worst = 0.0f64;
    for ((id, name), g) in ids.into_iter().zip(grads) {
        let Some((i, &analytic)) = g.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) else {
            continue;
        };
        let h = 1e-6;
        let orig = model.params.get(id).data[i];
        model.params.get_mut(id).data[i] = orig + h;
        let up = loss(&model)?;
        model.params.get_mut(id).data[i] = orig - h;
        let down = loss(&model)?;
        model.params.get_mut(id).data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-300);
        worst = worst.max(rel);
        println!("{name:28} [{i:>5}] analytic {analytic:+.6e} numeric {numeric:+.6e} rel {rel:.1e}");
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
