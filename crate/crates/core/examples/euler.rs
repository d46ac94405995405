//! Euler sampling on an analytic transport field, and guidance at scale 1.
//!
//! `cargo run --release --example euler`

use mfm::conditioning::build_condition;
use mfm::flow::{cfg_velocity, euler_integrate, GaussianTransport, SamplerConfig};
use mfm::latents::{LatentGrid, VideoTensor};
use mfm::task::TaskTag;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mfm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bundle = build_condition(&VideoTensor::zeros(1, 8, 8, 3), TaskTag::T2I, "unused", &mut rng)?;
    let field = GaussianTransport { target_mean: vec![1.0, -2.0, 0.5, 3.0], target_std: 0.5 };
    let x1 = LatentGrid::randn(1, 1, 1, 4, &mut rng);
    let exact = field.solution(&x1.data, 0.0);
    let mut prev: Option<f64> = None;
    for steps in [10, 20, 40, 80, 160] {
        let cfg = SamplerConfig { steps, guidance_scale: 1.0 };
        let end = euler_integrate(&field, x1.clone(), &bundle, &bundle, &cfg)?;
        let err = end.data.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        match prev {
            Some(p) => println!("{steps:>4} steps: error {err:.3e}  (halved by {:.3})", p / err),
            None => println!("{steps:>4} steps: error {err:.3e}"),
        }
        prev = Some(err);
    }

    let c = LatentGrid::randn(1, 2, 2, 3, &mut rng);
    let u = LatentGrid::randn(1, 2, 2, 3, &mut rng);
    println!("scale 1 returns the conditional velocity: {}", cfg_velocity(&c, &u, 1.0)? == c);
    println!("scale 0 returns the unconditional velocity: {}", cfg_velocity(&c, &u, 0.0)? == u);
    let nine = cfg_velocity(&c, &u, 9.0)?;
    println!("scale 9 first entry {:+.4} = u + 9 (c - u) = {:+.4}", nine.data[0], u.data[0] + 9.0 * (c.data[0] - u.data[0]));
    Ok(())
}
