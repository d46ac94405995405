//! Rectified-flow objective, logit-normal timesteps and the Euler sampler
//! with classifier-free guidance.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backbone::{MfmModel, ScalarConditions};
use crate::conditioning::ConditionBundle;
use crate::error::{MfmError, Result};
use crate::latents::LatentGrid;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_GUIDANCE: f64 = 9.0;

/// One training example on the straight path between data and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub x0: LatentGrid,
    pub eps: LatentGrid,
    pub time: f64,
    pub xt: LatentGrid,
    pub v_target: LatentGrid,
}

/// `sigmoid(z)` with `z ~ N(0, 1)`.
pub fn sample_time(rng: &mut impl Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    1.0 / (1.0 + (-z).exp())
}

/// Builds the sample for given noise and time.
pub fn flow_sample_at(x0: &LatentGrid, eps: &LatentGrid, time: f64) -> Result<FlowSample> {
    if !x0.is_finite() || !eps.is_finite() || !time.is_finite() {
        return Err(MfmError::NonFinite {
            context: "flow sample inputs".into(),
        });
    }
    // the endpoints are exact because one of the two weights is zero
    let xt = x0.zip_map(eps, |a, e| (1.0 - time) * a + time * e)?;
    let v_target = x0.zip_map(eps, |a, e| e - a)?;
    Ok(FlowSample {
        x0: x0.clone(),
        eps: eps.clone(),
        time,
        xt,
        v_target,
    })
}

pub fn make_flow_sample(x0: &LatentGrid, rng: &mut impl Rng) -> Result<FlowSample> {
    let (t, h, w, c) = x0.dims();
    let eps = LatentGrid::randn(t, h, w, c, rng);
    let time = sample_time(rng);
    flow_sample_at(x0, &eps, time)
}

/// Mean squared error between a predicted and the target velocity.
pub fn flow_loss(pred_v: &LatentGrid, sample: &FlowSample) -> Result<f64> {
    pred_v.ensure_same_shape(&sample.v_target)?;
    let n = pred_v.data.len() as f64;
    Ok(pred_v
        .data
        .iter()
        .zip(&sample.v_target.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `v_uncond + scale·(v_cond − v_uncond)`; scales 0 and 1 return the
/// corresponding branch unchanged.
pub fn cfg_velocity(v_cond: &LatentGrid, v_uncond: &LatentGrid, scale: f64) -> Result<LatentGrid> {
    v_cond.ensure_same_shape(v_uncond)?;
    if scale == 1.0 {
        return Ok(v_cond.clone());
    }
    if scale == 0.0 {
        return Ok(v_uncond.clone());
    }
    v_cond.zip_map(v_uncond, |c, u| u + scale * (c - u))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance_scale: DEFAULT_GUIDANCE,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.guidance_scale >= 0.0) || !self.guidance_scale.is_finite() {
            return Err(MfmError::Config(format!(
                "sampler needs steps ≥ 1 and a finite guidance scale ≥ 0, got {} / {}",
                self.steps, self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// Anything mapping `(x_t, t, bundle)` to a velocity of the same shape.
pub trait VelocityField {
    fn velocity(&self, x: &LatentGrid, time: f64, bundle: &ConditionBundle) -> Result<LatentGrid>;
}

impl<F> VelocityField for F
where
    F: Fn(&LatentGrid, f64, &ConditionBundle) -> Result<LatentGrid>,
{
    fn velocity(&self, x: &LatentGrid, time: f64, bundle: &ConditionBundle) -> Result<LatentGrid> {
        self(x, time, bundle)
    }
}

impl VelocityField for MfmModel {
    fn velocity(&self, x: &LatentGrid, time: f64, bundle: &ConditionBundle) -> Result<LatentGrid> {
        let scalars = ScalarConditions::new(time.clamp(0.0, 1.0), bundle.motion_score)?;
        self.forward(x, bundle, scalars)
    }
}

/// Integrates from `x1` at time 1 down to time 0 on a uniform grid.
pub fn euler_integrate(
    model: &impl VelocityField,
    x1: LatentGrid,
    bundle: &ConditionBundle,
    null_bundle: &ConditionBundle,
    cfg: &SamplerConfig,
) -> Result<LatentGrid> {
    cfg.validate()?;
    let dt = 1.0 / cfg.steps as f64;
    let mut x = x1;
    for step in 0..cfg.steps {
        let t = 1.0 - step as f64 * dt;
        let v_cond = model.velocity(&x, t, bundle)?;
        let v = if cfg.guidance_scale == 1.0 {
            v_cond
        } else {
            let v_uncond = model.velocity(&x, t, null_bundle)?;
            cfg_velocity(&v_cond, &v_uncond, cfg.guidance_scale)?
        };
        x = x.zip_map(&v, |a, b| a - dt * b)?;
        if !x.is_finite() {
            return Err(MfmError::NonFiniteSampler { step });
        }
    }
    Ok(x)
}

/// Draws standard normal noise of `shape` and integrates it to time 0.
pub fn euler_sample(
    model: &impl VelocityField,
    bundle: &ConditionBundle,
    null_bundle: &ConditionBundle,
    cfg: &SamplerConfig,
    shape: (usize, usize, usize, usize),
    rng: &mut impl Rng,
) -> Result<LatentGrid> {
    let (t, h, w, c) = shape;
    euler_integrate(model, LatentGrid::randn(t, h, w, c, rng), bundle, null_bundle, cfg)
}

/// Linear transport field carrying `N(0, I)` at time 1 to `N(a, s²I)` at
/// time 0 along the rectified-flow marginals, with its closed-form flow map.
///
/// With `s = 0` the field is `(x − a)/t` and Euler integrates it exactly.
#[derive(Clone, Debug)]
pub struct GaussianTransport {
    pub target_mean: Vec<f64>,
    pub target_std: f64,
}

impl GaussianTransport {
    fn sigma(&self, t: f64) -> f64 {
        let s = self.target_std;
        ((1.0 - t).powi(2) * s * s + t * t).sqrt()
    }

    fn dsigma(&self, t: f64) -> f64 {
        let s = self.target_std;
        (t - (1.0 - t) * s * s) / self.sigma(t)
    }

    pub fn velocity_at(&self, x: &[f64], t: f64) -> Vec<f64> {
        let k = self.dsigma(t) / self.sigma(t);
        x.iter()
            .zip(&self.target_mean)
            .map(|(&x, &a)| -a + k * (x - (1.0 - t) * a))
            .collect()
    }

    /// Exact position at time `t` of the trajectory through `x1` at time 1.
    pub fn solution(&self, x1: &[f64], t: f64) -> Vec<f64> {
        x1.iter()
            .zip(&self.target_mean)
            .map(|(&x, &a)| (1.0 - t) * a + self.sigma(t) * x)
            .collect()
    }
}

impl VelocityField for GaussianTransport {
    fn velocity(&self, x: &LatentGrid, time: f64, _bundle: &ConditionBundle) -> Result<LatentGrid> {
        if x.data.len() != self.target_mean.len() {
            return Err(MfmError::shape(self.target_mean.len(), x.data.len()));
        }
        let (t, h, w, c) = x.dims();
        LatentGrid::from_vec(t, h, w, c, self.velocity_at(&x.data, time))
    }
}
