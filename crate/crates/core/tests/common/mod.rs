//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

use mfm::backbone::{MfmModel, ModelConfig, ScalarConditions};
use mfm::conditioning::{build_condition, ConditionBundle};
use mfm::flow::{euler_integrate, flow_loss, flow_sample_at, FlowSample, GaussianTransport, SamplerConfig};
use mfm::latents::{LatentGrid, VideoTensor};
use mfm::task::TaskTag;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth random clip with values well inside `[-1, 1]`.
pub fn smooth_clip(frames: usize, height: usize, width: usize, seed: u64) -> VideoTensor {
    let mut r = rng(seed);
    let phase: [f64; 6] = std::array::from_fn(|_| r.random_range(0.0..6.28));
    VideoTensor::from_fn(frames, height, width, 3, |t, y, x, c| {
        let a = (x as f64 * 0.4 + t as f64 * 0.7 + phase[c]).sin();
        let b = (y as f64 * 0.3 - t as f64 * 0.2 + phase[c + 3]).cos();
        (0.45 * a + 0.35 * b) as f32
    })
}

/// Toy model with every weight nudged off its zero initialisation.
pub fn perturbed_toy(seed: u64) -> MfmModel {
    let mut model = MfmModel::new(&ModelConfig::toy(), seed).unwrap();
    model.params.perturb(0.05, &mut rng(seed + 1));
    model
}

/// Everything needed to evaluate `flow_loss ∘ forward` once.
pub struct LossCase {
    pub bundle: ConditionBundle,
    pub sample: FlowSample,
    pub scalars: ScalarConditions,
}

impl LossCase {
    /// A 5×32×32 clip (2×4×4 latent grid) with an I2V bundle.
    pub fn new(model: &MfmModel, seed: u64, null_prompt: bool) -> Self {
        let clip = smooth_clip(5, 32, 32, seed);
        let mut r = rng(seed + 7);
        let mut bundle = build_condition(&clip, TaskTag::I2V, "a drifting wave pattern", &mut r).unwrap();
        bundle.motion_score = 0.3;
        if null_prompt {
            bundle = bundle.with_null_prompt();
        }
        let codec = model.config.codec().unwrap();
        let x0 = codec.encode(&clip).unwrap();
        let (t, h, w, c) = x0.dims();
        let eps = LatentGrid::randn(t, h, w, c, &mut r);
        let sample = flow_sample_at(&x0, &eps, 0.37).unwrap();
        let scalars = ScalarConditions::new(sample.time, bundle.motion_score).unwrap();
        Self { bundle, sample, scalars }
    }

    pub fn loss(&self, model: &MfmModel) -> f64 {
        let v = model.forward(&self.sample.xt, &self.bundle, self.scalars).unwrap();
        flow_loss(&v, &self.sample).unwrap()
    }
}

/// One finite-difference comparison.
#[derive(Debug)]
pub struct GradCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Central differences at the largest-magnitude analytic entry of every
/// parameter tensor whose name passes `select`.
pub fn check_gradients(model: &mut MfmModel, case: &LossCase, select: impl Fn(&str) -> bool) -> Vec<GradCheck> {
    const H: f64 = 1e-6;
    let (loss, grads) = model
        .loss_and_gradients(&case.sample.xt, &case.sample.v_target, &case.bundle, case.scalars)
        .unwrap();
    assert!((loss - case.loss(model)).abs() < 1e-12 * loss.max(1.0));
    let ids: Vec<_> = model.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut out = Vec::new();
    for ((id, name), g) in ids.into_iter().zip(grads) {
        if !select(&name) {
            continue;
        }
        let (index, &analytic) = g
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty parameter");
        let orig = model.params.get(id).data[index];
        model.params.get_mut(id).data[index] = orig + H;
        let up = case.loss(model);
        model.params.get_mut(id).data[index] = orig - H;
        let down = case.loss(model);
        model.params.get_mut(id).data[index] = orig;
        out.push(GradCheck { name, index, analytic, numeric: (up - down) / (2.0 * H) });
    }
    out
}

/// Terminal error of Euler on the Gaussian transport field, and the exact endpoint.
pub fn euler_error(field: &GaussianTransport, x1: &[f64], steps: usize) -> f64 {
    let n = x1.len();
    let f = |x: &LatentGrid, t: f64, _: &ConditionBundle| -> mfm::Result<LatentGrid> {
        LatentGrid::from_vec(1, 1, 1, n, field.velocity_at(&x.data, t))
    };
    let bundle = dummy_bundle();
    let cfg = SamplerConfig { steps, guidance_scale: 1.0 };
    let start = LatentGrid::from_vec(1, 1, 1, n, x1.to_vec()).unwrap();
    let end = euler_integrate(&f, start, &bundle, &bundle, &cfg).unwrap();
    let exact = field.solution(x1, 0.0);
    end.data.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

pub fn dummy_bundle() -> ConditionBundle {
    let clip = VideoTensor::zeros(1, 8, 8, 3);
    build_condition(&clip, TaskTag::T2I, "unused", &mut rng(0)).unwrap()
}

/// Whether `hits` out of `n` Bernoulli draws is within three standard
/// deviations of rate `p`.
pub fn within_three_sigma(hits: usize, n: usize, p: f64) -> (bool, f64, f64) {
    let rate = hits as f64 / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    ((rate - p).abs() <= 3.0 * sigma, rate, sigma)
}
