//! Transformer blocks and the full conditioned velocity model.

use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::rope::{rotary_table, token_positions};
use super::text::{embed_text, TextEmbedding};
use crate::adapter::Adapter;
use crate::conditioning::ConditionBundle;
use crate::container::{read_checkpoint, write_checkpoint};
use crate::error::{MfmError, Result};
use crate::latents::{latent_dims, LatentGrid};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tape::{Grid, Tape, Var};

const NORM_EPS: f64 = 1e-6;
const QK_EPS: f64 = 1e-6;
/// Timesteps in `[0, 1]` are stretched before the sinusoidal embedding.
const TIMESTEP_SCALE: f64 = 1000.0;

/// Timestep and motion score fed through AdaLN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarConditions {
    pub timestep: f64,
    pub motion_score: f64,
}

impl ScalarConditions {
    pub fn new(timestep: f64, motion_score: f64) -> Result<Self> {
        let s = Self { timestep, motion_score };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.timestep.is_finite() || !self.motion_score.is_finite() {
            return Err(MfmError::NonFinite {
                context: "scalar conditions".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.timestep) || self.motion_score < 0.0 {
            return Err(MfmError::Config(format!(
                "timestep {} outside [0, 1] or negative motion score {}",
                self.timestep, self.motion_score
            )));
        }
        Ok(())
    }
}

/// `[cos(x·f_0..), sin(x·f_0..)]` with `f_i = 10000^(-i/half)`.
pub fn sinusoidal_embedding(x: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (x * f).sin_cos();
        out[i] = c;
        out[half + i] = s;
    }
    out
}

/// RMS normalisation followed by a per-channel gain.
pub fn qk_norm(v: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    v.iter().zip(gain).map(|(x, g)| x * inv * g).collect()
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, zero: bool, rng: &mut impl Rng) -> Self {
        let init = if zero { Init::Zeros } else { Init::FanIn(fan_in) };
        Self {
            weight: store.register(format!("{name}.weight"), &[fan_in, fan_out], init, rng),
            bias: store.register(format!("{name}.bias"), &[fan_out], Init::Zeros, rng),
        }
    }

    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, bound.var(self.weight));
        tape.add_row(y, bound.var(self.bias))
    }
}

#[derive(Clone, Debug)]
struct Block {
    qkv: Linear,
    q_gain: ParamId,
    k_gain: ParamId,
    attn_out: Linear,
    cross_q: Linear,
    cross_kv: Linear,
    cross_out: Linear,
    ffn_in: Linear,
    ffn_out: Linear,
    modulation: Linear,
}

/// Attention probabilities and block boundaries recorded during a forward pass.
#[derive(Debug, Default)]
pub struct ForwardTrace {
    /// Per layer and head, `L × L` self-attention weights.
    pub self_attention: Vec<Var>,
    /// Per layer and head, `L × S` cross-attention weights.
    pub cross_attention: Vec<Var>,
    /// Per layer and head, pre-softmax `q·k` with normalised `q`, `k`.
    pub logits: Vec<Var>,
    pub block_inputs: Vec<Var>,
    pub block_outputs: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Transformer {
    config: ModelConfig,
    embed: Linear,
    time_in: Linear,
    time_out: Linear,
    null_text: ParamId,
    blocks: Vec<Block>,
    final_modulation: Linear,
    output: Linear,
}

impl Transformer {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, x, c, f, hd) = (
            config.model_dim(),
            config.text_dim,
            config.latent_channels,
            config.ffn_dim,
            config.head_dim,
        );
        let embed = Linear::new(store, "embed", c, d, false, rng);
        let time_in = Linear::new(store, "time.in", d, d, false, rng);
        let time_out = Linear::new(store, "time.out", d, d, false, rng);
        let null_text = store.register("text.null", &[x], Init::Normal(1.0 / (x as f64).sqrt()), rng);
        let blocks = (0..config.layers)
            .map(|i| {
                let p = format!("blocks.{i}");
                Block {
                    qkv: Linear::new(store, &format!("{p}.attn.qkv"), d, 3 * d, false, rng),
                    q_gain: store.register(format!("{p}.attn.q_gain"), &[hd], Init::Ones, rng),
                    k_gain: store.register(format!("{p}.attn.k_gain"), &[hd], Init::Ones, rng),
                    attn_out: Linear::new(store, &format!("{p}.attn.out"), d, d, false, rng),
                    cross_q: Linear::new(store, &format!("{p}.cross.q"), d, d, false, rng),
                    cross_kv: Linear::new(store, &format!("{p}.cross.kv"), x, 2 * d, false, rng),
                    cross_out: Linear::new(store, &format!("{p}.cross.out"), d, d, true, rng),
                    ffn_in: Linear::new(store, &format!("{p}.ffn.in"), d, f, false, rng),
                    ffn_out: Linear::new(store, &format!("{p}.ffn.out"), f, d, false, rng),
                    modulation: Linear::new(store, &format!("{p}.ada"), d, 6 * d, true, rng),
                }
            })
            .collect();
        let final_modulation = Linear::new(store, "final.ada", d, 2 * d, true, rng);
        let output = Linear::new(store, "final.out", d, c, true, rng);
        Ok(Self {
            config: config.clone(),
            embed,
            time_in,
            time_out,
            null_text,
            blocks,
            final_modulation,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn modulate(tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Var {
        let n = tape.layer_norm_rows(x, NORM_EPS);
        let s = tape.add_scalar(scale, 1.0);
        let y = tape.mul_row(n, s);
        tape.add_row(y, shift)
    }

    /// Velocity for `L × c` tokens on `grid`, as an `L × c` matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        tokens: Var,
        grid: Grid,
        text: &TextEmbedding,
        scalars: ScalarConditions,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        scalars.validate()?;
        let cfg = &self.config;
        let (d, hd) = (cfg.model_dim(), cfg.head_dim);
        let (len, c) = tape.shape(tokens);
        if c != cfg.latent_channels || len != grid.cells() {
            return Err(MfmError::shape(
                format!("{} tokens × {}", grid.cells(), cfg.latent_channels),
                format!("{len} × {c}"),
            ));
        }
        let text = match text {
            TextEmbedding::Null => bound.var(self.null_text),
            TextEmbedding::Tokens { dim, data } => {
                if *dim != cfg.text_dim {
                    return Err(MfmError::shape(cfg.text_dim, *dim));
                }
                tape.constant(data.len() / dim, *dim, data.clone())
            }
        };
        let table = Rc::new(rotary_table(&token_positions(grid.t, grid.h, grid.w), hd)?);
        let score_scale = 1.0 / (hd as f64).sqrt();

        let mut cond: Vec<f64> = sinusoidal_embedding(TIMESTEP_SCALE * scalars.timestep, d);
        for (a, b) in cond.iter_mut().zip(sinusoidal_embedding(scalars.motion_score, d)) {
            *a += b;
        }
        let cond = tape.constant(1, d, cond);
        let h = self.time_in.apply(tape, bound, cond);
        let h = tape.silu(h);
        let emb = self.time_out.apply(tape, bound, h);
        let emb = tape.silu(emb);

        let mut x = self.embed.apply(tape, bound, tokens);
        for block in &self.blocks {
            if let Some(t) = trace.as_deref_mut() {
                t.block_inputs.push(x);
            }
            let m = block.modulation.apply(tape, bound, emb);
            let part: Vec<Var> = (0..6).map(|k| tape.cols(m, k * d, d)).collect();
            let (shift1, scale1, gate1, shift2, scale2, gate2) =
                (part[0], part[1], part[2], part[3], part[4], part[5]);

            // self-attention
            let hn = Self::modulate(tape, x, shift1, scale1);
            let qkv = block.qkv.apply(tape, bound, hn);
            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let q = tape.cols(qkv, head * hd, hd);
                let k = tape.cols(qkv, d + head * hd, hd);
                let v = tape.cols(qkv, 2 * d + head * hd, hd);
                let q = tape.rms_norm_rows(q, QK_EPS);
                let q = tape.mul_row(q, bound.var(block.q_gain));
                let k = tape.rms_norm_rows(k, QK_EPS);
                let k = tape.mul_row(k, bound.var(block.k_gain));
                let q = tape.rotary(q, table.clone());
                let k = tape.rotary(k, table.clone());
                let kt = tape.transpose(k);
                let logits = tape.matmul(q, kt);
                let scores = tape.scale(logits, score_scale);
                let p = tape.softmax_rows(scores);
                if let Some(t) = trace.as_deref_mut() {
                    t.logits.push(logits);
                    t.self_attention.push(p);
                }
                heads.push(tape.matmul(p, v));
            }
            let a = tape.concat_cols(&heads);
            let a = block.attn_out.apply(tape, bound, a);
            let a = tape.mul_row(a, gate1);
            x = tape.add(x, a);

            // cross-attention to text
            let hn = tape.layer_norm_rows(x, NORM_EPS);
            let q_all = block.cross_q.apply(tape, bound, hn);
            let kv = block.cross_kv.apply(tape, bound, text);
            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let q = tape.cols(q_all, head * hd, hd);
                let k = tape.cols(kv, head * hd, hd);
                let v = tape.cols(kv, d + head * hd, hd);
                let kt = tape.transpose(k);
                let s = tape.matmul(q, kt);
                let s = tape.scale(s, score_scale);
                let p = tape.softmax_rows(s);
                if let Some(t) = trace.as_deref_mut() {
                    t.cross_attention.push(p);
                }
                heads.push(tape.matmul(p, v));
            }
            let a = tape.concat_cols(&heads);
            let a = block.cross_out.apply(tape, bound, a);
            x = tape.add(x, a);

            // feed-forward
            let hn = Self::modulate(tape, x, shift2, scale2);
            let f = block.ffn_in.apply(tape, bound, hn);
            let f = tape.gelu(f);
            let f = block.ffn_out.apply(tape, bound, f);
            let f = tape.mul_row(f, gate2);
            x = tape.add(x, f);
            tape.check_finite(x, "transformer block")?;
            if let Some(t) = trace.as_deref_mut() {
                t.block_outputs.push(x);
            }
        }
        let m = self.final_modulation.apply(tape, bound, emb);
        let shift = tape.cols(m, 0, d);
        let scale = tape.cols(m, d, d);
        let hn = Self::modulate(tape, x, shift, scale);
        let out = self.output.apply(tape, bound, hn);
        tape.check_finite(out, "velocity output")?;
        Ok(out)
    }
}

/// Adapter, transformer and their parameters.
#[derive(Clone, Debug)]
pub struct MfmModel {
    pub config: ModelConfig,
    pub adapter: Adapter,
    pub transformer: Transformer,
    pub params: ParamStore,
}

impl MfmModel {
    /// Fresh weights drawn from a seeded generator.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let adapter = Adapter::new(config.adapter(), &mut params, &mut rng);
        let transformer = Transformer::new(config, &mut params, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            adapter,
            transformer,
            params,
        })
    }

    pub fn adapter_parameter_count(&self) -> usize {
        self.params.count_prefix("adapter.")
    }

    pub fn transformer_parameter_count(&self) -> usize {
        self.params.count() - self.adapter_parameter_count()
    }

    /// Places the velocity prediction for `latent` on `tape`.
    pub fn build(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        latent: &LatentGrid,
        bundle: &ConditionBundle,
        scalars: ScalarConditions,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        let (t, h, w, c) = latent.dims();
        if c != self.config.latent_channels {
            return Err(MfmError::shape(
                format!("{} latent channels", self.config.latent_channels),
                c,
            ));
        }
        let expected = latent_dims(bundle.frames(), bundle.pixel.height, bundle.pixel.width)?;
        if expected != (t, h, w) {
            return Err(MfmError::shape(format!("latent {expected:?}"), format!("{:?}", (t, h, w))));
        }
        let (feature, grid) = self.adapter.forward(tape, bound, &bundle.stacked())?;
        let x = tape.constant(latent.tokens(), c, latent.data.clone());
        let x = tape.add(x, feature);
        let text = embed_text(&bundle.prompt, self.config.text_dim, self.config.max_text_len);
        self.transformer.forward(tape, bound, x, grid, &text, scalars, trace)
    }

    /// Predicted velocity, evaluated without keeping gradients.
    pub fn forward(&self, latent: &LatentGrid, bundle: &ConditionBundle, scalars: ScalarConditions) -> Result<LatentGrid> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let v = self.build(&mut tape, &bound, latent, bundle, scalars, None)?;
        let (t, h, w, c) = latent.dims();
        LatentGrid::from_vec(t, h, w, c, tape.value(v).to_vec())
    }

    /// Mean squared error against `target` and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        latent: &LatentGrid,
        target: &LatentGrid,
        bundle: &ConditionBundle,
        scalars: ScalarConditions,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        latent.ensure_same_shape(target)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let v = self.build(&mut tape, &bound, latent, bundle, scalars, None)?;
        let loss = tape.mse_const(v, Rc::new(target.data.clone()));
        let grads = tape.backward(loss);
        let per_param = bound.vars().iter().map(|&p| grads.of(p)).collect();
        Ok((tape.scalar(loss), per_param))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut f, &self.params.to_named())?;
        use std::io::Write;
        f.flush()?;
        Ok(())
    }

    /// Loads weights saved by [`MfmModel::save`] into a model of `config`.
    pub fn load(config: &ModelConfig, path: impl AsRef<Path>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        model.params.load_named(&read_checkpoint(&mut f)?)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{build_condition, ConditionLayout};
    use crate::latents::VideoTensor;
    use crate::task::TaskTag;

    fn bundle(frames: usize, size: usize, task: TaskTag) -> ConditionBundle {
        let clip = VideoTensor::from_fn(frames, size, size, 3, |t, y, x, c| {
            ((t + 2 * y + 3 * x + c) as f32 * 0.37).sin() * 0.8
        });
        build_condition(&clip, task, "a small test clip", &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn sinusoid_shape() {
        let e = sinusoidal_embedding(0.0, 8);
        assert_eq!(e, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn qk_norm_examples() {
        let g = vec![1.0; 4];
        let unit = [1.0, -1.0, 1.0, -1.0];
        for (a, b) in qk_norm(&unit, &g, 1e-12).iter().zip(unit) {
            assert!((a - b).abs() < 1e-6);
        }
        let v = [0.3, -2.0, 0.7, 1.1];
        let big: Vec<f64> = v.iter().map(|x| x * 10.0).collect();
        for (a, b) in qk_norm(&v, &g, 1e-6).iter().zip(qk_norm(&big, &g, 1e-6)) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(qk_norm(&[0.0; 4], &g, 1e-6), vec![0.0; 4]);
    }

    #[test]
    fn zero_init_gives_zero_velocity_and_identity_blocks() {
        let model = MfmModel::new(&ModelConfig::toy(), 1).unwrap();
        let b = bundle(5, 32, TaskTag::I2V);
        let latent = LatentGrid::randn(2, 4, 4, 12, &mut ChaCha8Rng::seed_from_u64(2));
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let mut trace = ForwardTrace::default();
        let s = ScalarConditions::new(0.4, 0.1).unwrap();
        let v = model.build(&mut tape, &bound, &latent, &b, s, Some(&mut trace)).unwrap();
        assert!(tape.value(v).iter().all(|&x| x == 0.0));
        for (i, o) in trace.block_inputs.iter().zip(&trace.block_outputs) {
            assert_eq!(tape.value(*i), tape.value(*o));
        }
    }

    #[test]
    fn full_attention_over_all_tokens() {
        let mut model = MfmModel::new(&ModelConfig::toy(), 1).unwrap();
        model.params.perturb(0.05, &mut ChaCha8Rng::seed_from_u64(9));
        let b = bundle(5, 32, TaskTag::VINP);
        let latent = LatentGrid::randn(2, 4, 4, 12, &mut ChaCha8Rng::seed_from_u64(2));
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let mut trace = ForwardTrace::default();
        let s = ScalarConditions::new(0.7, 0.0).unwrap();
        model.build(&mut tape, &bound, &latent, &b, s, Some(&mut trace)).unwrap();
        assert_eq!(trace.self_attention.len(), 2 * 4);
        for &p in &trace.self_attention {
            assert_eq!(tape.shape(p), (32, 32));
            for row in tape.value(p).chunks_exact(32) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        for &p in &trace.cross_attention {
            for row in tape.value(p).chunks(tape.shape(p).1) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        // unit gains: |q·k| is at most head_dim after normalisation
        for &l in &trace.logits {
            assert!(tape.value(l).iter().all(|x| x.abs() <= 16.0 + 1e-9));
        }
    }

    #[test]
    fn deterministic_forward_and_shape() {
        let mut model = MfmModel::new(&ModelConfig::toy(), 4).unwrap();
        model.params.perturb(0.05, &mut ChaCha8Rng::seed_from_u64(1));
        let b = bundle(1, 16, TaskTag::IINP);
        let latent = LatentGrid::randn(1, 2, 2, 12, &mut ChaCha8Rng::seed_from_u64(3));
        let s = ScalarConditions::new(0.5, 0.0).unwrap();
        let a = model.forward(&latent, &b, s).unwrap();
        let again = model.forward(&latent, &b, s).unwrap();
        assert_eq!(a.dims(), latent.dims());
        assert_eq!(a.data, again.data);
        assert!(a.data.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let model = MfmModel::new(&ModelConfig::toy(), 1).unwrap();
        let b = bundle(5, 32, TaskTag::T2V);
        let s = ScalarConditions::new(0.5, 0.0).unwrap();
        assert!(model.forward(&LatentGrid::zeros(2, 4, 4, 8), &b, s).is_err());
        assert!(model.forward(&LatentGrid::zeros(1, 4, 4, 12), &b, s).is_err());
        assert!(ScalarConditions::new(1.5, 0.0).is_err());
        assert!(ScalarConditions::new(f64::NAN, 0.0).is_err());
        let empty = ConditionBundle {
            layout: ConditionLayout::Empty,
            ..b
        };
        assert!(model.forward(&LatentGrid::zeros(2, 4, 4, 12), &empty, s).is_ok());
    }

    #[test]
    fn parameter_count_formula_matches_allocation() {
        let cfg = ModelConfig::toy();
        let model = MfmModel::new(&cfg, 0).unwrap();
        assert_eq!(model.transformer_parameter_count(), cfg.parameter_count());
        assert_eq!(model.adapter_parameter_count(), cfg.adapter().parameter_count());
        assert!(model.adapter_parameter_count() * 100 < model.transformer_parameter_count());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = MfmModel::new(&ModelConfig::toy(), 2).unwrap();
        model.params.perturb(0.1, &mut ChaCha8Rng::seed_from_u64(0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let back = MfmModel::load(&ModelConfig::toy(), &path).unwrap();
        assert_eq!(back.params, model.params);
    }
}
