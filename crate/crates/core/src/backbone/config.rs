use std::fmt;
use std::str::FromStr;

use crate::adapter::AdapterConfig;
use crate::error::{MfmError, Result};
use crate::latents::{LatentCodec, ProjectionKind, SPATIAL_FACTOR};

/// Transformer hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub name: String,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub text_dim: usize,
    pub latent_channels: usize,
    pub max_text_len: usize,
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 3] = ["2B", "8B", "toy"];

    pub fn preset(name: &str) -> Result<Self> {
        let (layers, heads, ffn_dim, latent_channels) = match name {
            "2B" => (28, 28, 7168, 16),
            "8B" => (40, 48, 12288, 16),
            "toy" => (2, 4, 256, 12),
            other => return Err(MfmError::Config(format!("unknown preset {other:?}"))),
        };
        let head_dim = if name == "toy" { 16 } else { 64 };
        Ok(Self {
            name: name.to_string(),
            layers,
            heads,
            head_dim,
            ffn_dim,
            text_dim: 2048,
            latent_channels,
            max_text_len: super::MAX_TEXT_LEN,
        })
    }

    pub fn toy() -> Self {
        Self::preset("toy").expect("toy preset")
    }

    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// `(model_dim, text_dim)`.
    pub fn cross_attn_dims(&self) -> (usize, usize) {
        (self.model_dim(), self.text_dim)
    }

    pub fn adapter(&self) -> AdapterConfig {
        AdapterConfig::for_latent(self.latent_channels)
    }

    /// Codec producing `latent_channels` channels from RGB clips: the plain
    /// fold when the widths agree, otherwise its low-frequency projection.
    pub fn codec(&self) -> Result<LatentCodec> {
        let folded = 3 * SPATIAL_FACTOR * SPATIAL_FACTOR;
        if self.latent_channels == folded {
            Ok(LatentCodec::new(3))
        } else {
            LatentCodec::projected(3, self.latent_channels, ProjectionKind::LowFrequency)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MfmError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return bad("layers, heads and ffn_dim must be positive".into());
        }
        if self.head_dim == 0 || self.head_dim % 16 != 0 {
            return bad(format!("head_dim {} is not a positive multiple of 16", self.head_dim));
        }
        if self.text_dim == 0 || self.latent_channels == 0 || self.max_text_len == 0 {
            return bad("text_dim, latent_channels and max_text_len must be positive".into());
        }
        Ok(())
    }

    /// Transformer parameter count, computed without allocating weights.
    pub fn parameter_count(&self) -> usize {
        let (d, f, x, c) = (self.model_dim(), self.ffn_dim, self.text_dim, self.latent_channels);
        let linear = |i: usize, o: usize| i * o + o;
        let block = linear(d, 3 * d)
            + linear(d, d)
            + 2 * self.head_dim
            + linear(d, d)
            + linear(x, 2 * d)
            + linear(d, d)
            + linear(d, f)
            + linear(f, d)
            + linear(d, 6 * d);
        linear(c, d) + 2 * linear(d, d) + x + self.layers * block + linear(d, 2 * d) + linear(d, c)
    }

    /// Parses `key = value` lines; `preset = NAME` loads a preset that later
    /// keys override. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Option<ModelConfig> = None;
        let mut pending: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| MfmError::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k == "preset" {
                cfg = Some(Self::preset(&v).map_err(|e| MfmError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            } else {
                pending.push((i + 1, k, v));
            }
        }
        let mut cfg = cfg.unwrap_or_else(|| ModelConfig {
            name: "custom".into(),
            ..Self::toy()
        });
        let mut model_dim = None;
        for (line, k, v) in pending {
            let err = |m: String| MfmError::Parse { line, message: m };
            let num = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| err(format!("{k}: expected a count, got {s:?}")))
            };
            match k.as_str() {
                "name" => cfg.name = v,
                "layers" => cfg.layers = num(&v)?,
                "heads" => cfg.heads = num(&v)?,
                "head_dim" => cfg.head_dim = num(&v)?,
                "ffn_dim" => cfg.ffn_dim = num(&v)?,
                "text_dim" => cfg.text_dim = num(&v)?,
                "latent_channels" => cfg.latent_channels = num(&v)?,
                "max_text_len" => cfg.max_text_len = num(&v)?,
                "model_dim" => model_dim = Some((line, num(&v)?)),
                "cross_attn_dims" => {
                    let inner = v.trim_start_matches('(').trim_end_matches(')');
                    let (a, b) = inner
                        .split_once(',')
                        .ok_or_else(|| err(format!("cross_attn_dims: expected (a, b), got {v:?}")))?;
                    model_dim = Some((line, num(a)?));
                    cfg.text_dim = num(b)?;
                }
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        if let Some((line, d)) = model_dim {
            if d != cfg.model_dim() {
                return Err(MfmError::Parse {
                    line,
                    message: format!(
                        "model_dim {d} differs from heads·head_dim = {}",
                        cfg.model_dim()
                    ),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name = {}", self.name)?;
        writeln!(f, "layers = {}", self.layers)?;
        writeln!(f, "heads = {}", self.heads)?;
        writeln!(f, "head_dim = {}", self.head_dim)?;
        writeln!(f, "ffn_dim = {}", self.ffn_dim)?;
        writeln!(f, "cross_attn_dims = ({}, {})", self.model_dim(), self.text_dim)?;
        writeln!(f, "latent_channels = {}", self.latent_channels)?;
        writeln!(f, "max_text_len = {}", self.max_text_len)
    }
}

impl FromStr for ModelConfig {
    type Err = MfmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}
