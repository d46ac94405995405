//! Staged training recipe.
//!
//! One stage per line as whitespace-separated `key=value` fields:
//!
//! ```text
//! stage=128px resolution=49x128x224 image_ratio=1.0 sp=1 bs=16 lr=1e-4 iters=170000
//! ```
//!
//! `dataset=...` and `seen=...` are accepted as free-form notes; `sp` is
//! parsed and ignored at this scale. Blank lines and `#` comments are skipped.

use std::fmt;

use crate::error::{MfmError, Result};
use crate::latents::latent_dims;

#[derive(Clone, Debug, PartialEq)]
pub struct RecipeStage {
    pub name: String,
    /// `(T, H, W)` of video samples; images use `(1, H, W)`.
    pub resolution: (usize, usize, usize),
    /// Probability that a sample is an image.
    pub image_video_ratio: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub sequence_parallel: usize,
    pub dataset: Option<String>,
}

impl RecipeStage {
    pub fn new(name: &str, resolution: (usize, usize, usize), ratio: f64, batch: usize, lr: f64, iters: usize) -> Self {
        Self {
            name: name.to_string(),
            resolution,
            image_video_ratio: ratio,
            batch_size: batch,
            learning_rate: lr,
            iterations: iters,
            sequence_parallel: 1,
            dataset: None,
        }
    }

    pub fn tokens(&self) -> usize {
        let (t, h, w) = self.resolution;
        t * h * w
    }

    pub fn validate(&self) -> Result<()> {
        let (t, h, w) = self.resolution;
        latent_dims(t, h, w)?;
        if t > 1 && t < 3 {
            return Err(MfmError::Config(format!("stage {}: video stages need at least 3 frames", self.name)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(MfmError::Config(format!("stage {}: learning rate must be positive", self.name)));
        }
        if !(0.0..=1.0).contains(&self.image_video_ratio) {
            return Err(MfmError::Config(format!("stage {}: image ratio outside [0, 1]", self.name)));
        }
        if self.batch_size == 0 {
            return Err(MfmError::Config(format!("stage {}: batch size must be positive", self.name)));
        }
        Ok(())
    }
}

impl fmt::Display for RecipeStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (t, h, w) = self.resolution;
        write!(f, "stage={}", self.name)?;
        if let Some(d) = &self.dataset {
            write!(f, " dataset={d}")?;
        }
        write!(
            f,
            " resolution={t}x{h}x{w} image_ratio={} sp={} bs={} lr={:e} iters={}",
            self.image_video_ratio, self.sequence_parallel, self.batch_size, self.learning_rate, self.iterations
        )
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<RecipeStage> {
    let err = |m: String| MfmError::Parse { line: lineno, message: m };
    let mut stage = RecipeStage::new("", (0, 0, 0), f64::NAN, 0, f64::NAN, 0);
    let mut seen = std::collections::BTreeSet::new();
    for field in line.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {field:?}")))?;
        if !seen.insert(k.to_string()) {
            return Err(err(format!("duplicate field {k:?}")));
        }
        let count = |v: &str| v.parse::<usize>().map_err(|_| err(format!("{k}: expected a count, got {v:?}")));
        let real = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{k}: expected a number, got {v:?}")));
        match k {
            "stage" => stage.name = v.to_string(),
            "dataset" => stage.dataset = Some(v.to_string()),
            "seen" => {}
            "resolution" => {
                let parts: Vec<&str> = v.split('x').collect();
                if parts.len() != 3 {
                    return Err(err(format!("resolution: expected TxHxW, got {v:?}")));
                }
                stage.resolution = (count(parts[0])?, count(parts[1])?, count(parts[2])?);
            }
            "image_ratio" => stage.image_video_ratio = real(v)?,
            "sp" => stage.sequence_parallel = count(v)?,
            "bs" => stage.batch_size = count(v)?,
            "lr" => stage.learning_rate = real(v)?,
            "iters" => stage.iterations = count(v)?,
            _ => return Err(err(format!("unknown field {k:?}"))),
        }
    }
    for required in ["stage", "resolution", "image_ratio", "bs", "lr", "iters"] {
        if !seen.contains(required) {
            return Err(err(format!("missing field {required:?}")));
        }
    }
    stage.validate().map_err(|e| err(e.to_string()))?;
    Ok(stage)
}

/// Parses a recipe; errors carry the 1-based line number.
pub fn parse_recipe(text: &str) -> Result<Vec<RecipeStage>> {
    let mut stages = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let stage = parse_line(line, i + 1)?;
        if let Some(prev) = stages.last() {
            let prev: &RecipeStage = prev;
            if stage.tokens() < prev.tokens() {
                return Err(MfmError::Parse {
                    line: i + 1,
                    message: format!("stage {} has a smaller resolution than {}", stage.name, prev.name),
                });
            }
        }
        stages.push(stage);
    }
    if stages.is_empty() {
        return Err(MfmError::Config("recipe has no stages".into()));
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "\
# progressive recipe
stage=128px dataset=160M-images+120M-videos resolution=49x128x224 image_ratio=1.0 sp=1 bs=16 lr=1e-4 iters=170000
stage=360px resolution=89x352x640 image_ratio=0.7 sp=1 bs=2 lr=8e-5 iters=100000
";

    #[test]
    fn parses_and_round_trips() {
        let stages = parse_recipe(TABLE).unwrap();
        assert_eq!(stages.len(), 2);
        assert_eq!(stages[0].resolution, (49, 128, 224));
        assert_eq!(stages[1].learning_rate, 8e-5);
        let text: String = stages.iter().map(|s| format!("{s}\n")).collect();
        assert_eq!(parse_recipe(&text).unwrap(), stages);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = [
            ("stage=a resolution=5x16x16 image_ratio=0 bs=1 lr=0 iters=1", 1),
            ("\n\nstage=a resolution=5x16x17 image_ratio=0 bs=1 lr=1 iters=1", 3),
            ("stage=a resolution=5x16x16 image_ratio=0 bs=1 lr=1", 1),
            ("stage=a resolution=9x32x32 image_ratio=0 bs=1 lr=1 iters=1\nstage=b resolution=5x32x32 image_ratio=0 bs=1 lr=1 iters=1", 2),
            ("stage=a resolution=5x16x16 image_ratio=0 bs=1 lr=1 iters=1 colour=red", 1),
        ];
        for (text, line) in bad {
            match parse_recipe(text) {
                Err(MfmError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(parse_recipe("# nothing\n").is_err());
    }
}
