//! Codec and adapter shapes, and the size of the adapter next to the backbone.
//!
//! `cargo run --release --example shapes`

use mfm::adapter::{Adapter, AdapterConfig};
use mfm::backbone::{MfmModel, ModelConfig};
use mfm::conditioning::build_condition;
use mfm::latents::{latent_dims, VideoTensor};
use mfm::params::ParamStore;
use mfm::task::TaskTag;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mfm::Result<()> {
    for (t, h, w) in [(1, 128, 224), (17, 64, 64), (49, 128, 224), (97, 360, 640), (97, 960, 960)] {
        let (lt, lh, lw) = latent_dims(t, h, w)?;
        println!("{t:>3}x{h:>3}x{w:>3} -> {lt:>2}x{lh:>3}x{lw:>3}  ({} tokens)", lt * lh * lw);
    }
    for bad in [(6, 64, 64), (5, 60, 64)] {
        println!("{bad:?} rejected: {}", latent_dims(bad.0, bad.1, bad.2).unwrap_err());
    }

    let config = ModelConfig::toy();
    let codec = config.codec()?;
    let clip = VideoTensor::from_fn(49, 128, 224, 3, |t, y, x, c| ((x + 2 * y + t + c) as f32 * 0.05).sin() * 0.5);
    let z = codec.encode(&clip)?;
    let mut store = ParamStore::new();
    let adapter = Adapter::new(AdapterConfig::for_latent(config.latent_channels), &mut store, &mut ChaCha8Rng::seed_from_u64(0));
    let bundle = build_condition(&clip, TaskTag::VINP, "a lake", &mut ChaCha8Rng::seed_from_u64(1))?;
    let feature = adapter.adapt(&store, &bundle)?;
    println!("codec latent {:?}, adapter feature {:?}", z.dims(), feature.dims());

    let model = MfmModel::new(&config, 0)?;
    let backbone = model.transformer_parameter_count();
    let adapter_params = model.adapter_parameter_count();
    println!(
        "toy backbone {backbone} parameters, adapter {adapter_params} ({:.2}% of the backbone)",
        100.0 * adapter_params as f64 / backbone as f64
    );
    for preset in [ModelConfig::preset("2B")?, ModelConfig::preset("8B")?] {
        println!("{}: model_dim {}, {} layers, {} parameters", preset.name, preset.model_dim(), preset.layers, preset.parameter_count());
    }
    Ok(())
}
