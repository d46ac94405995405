//! The training loop and its metrics log.

use std::io::{BufRead, Write};
use std::thread;

use rand::Rng;

use super::corpus::{fit_clip, CorpusItem};
use super::optim::Adam;
use super::recipe::RecipeStage;
use super::sampling::{apply_dropout_traced, sample_task, DropoutPolicy, TaskWeights};
use crate::backbone::{MfmModel, ScalarConditions};
use crate::conditioning::{build_condition, qualified_tasks, ConditionBundle};
use crate::error::{MfmError, Result};
use crate::flow::make_flow_sample;
use crate::latents::LatentGrid;
use crate::task::TaskTag;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: TaskWeights,
    pub policy: DropoutPolicy,
    /// Linear warm-up length at the start of every stage.
    pub warmup_steps: usize,
    /// Every this many steps the first bundle of the batch is checked for
    /// mask/pixel consistency.
    pub consistency_every: usize,
    /// Worker threads for per-sample gradients; results are reduced in
    /// sample order, so the count never changes the outcome.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: TaskWeights::default(),
            policy: DropoutPolicy::default(),
            warmup_steps: 100,
            consistency_every: 100,
            threads: thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8),
        }
    }
}

/// One line of the metrics log: one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub stage: String,
    pub task: TaskTag,
    pub is_image: bool,
    pub null_text: bool,
    pub zeroed: bool,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: MfmModel,
    pub log: Vec<MetricRecord>,
}

impl TrainOutcome {
    /// Mean loss of every optimiser step, in order.
    pub fn step_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.log {
            if out.len() <= r.step {
                out.resize(r.step + 1, (0.0, 0));
            }
            out[r.step].0 += r.loss;
            out[r.step].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    /// Mean of the last `window` step losses over the mean of the first `window`.
    pub fn loss_ratio(&self, window: usize) -> Option<f64> {
        let losses = self.step_losses();
        if losses.len() < window || window == 0 {
            return None;
        }
        let first = losses[..window].iter().sum::<f64>() / window as f64;
        let last = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
        Some(last / first)
    }
}

struct Prepared {
    bundle: ConditionBundle,
    xt: LatentGrid,
    target: LatentGrid,
    scalars: ScalarConditions,
    record: MetricRecord,
}

/// Runs every stage of `recipe` in order on `corpus`, starting from `model`.
pub fn train(
    recipe: &[RecipeStage],
    corpus: &[CorpusItem],
    mut model: MfmModel,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    cfg.policy.validate()?;
    for s in recipe {
        s.validate()?;
    }
    let images: Vec<&CorpusItem> = corpus.iter().filter(|i| i.clip.frames == 1).collect();
    let videos: Vec<&CorpusItem> = corpus.iter().filter(|i| i.clip.frames > 1).collect();
    if corpus.is_empty() {
        return Err(MfmError::Config("empty corpus".into()));
    }
    let codec = model.config.codec()?;
    let mut adam = Adam::new(model.params.iter().map(|(_, p)| p.numel()));
    let mut log = Vec::new();
    let mut step = 0usize;

    for stage in recipe {
        for local in 0..stage.iterations {
            let warm = if cfg.warmup_steps == 0 {
                1.0
            } else {
                ((local + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
            };
            let lr = stage.learning_rate * warm;

            let mut batch = Vec::with_capacity(stage.batch_size);
            for b in 0..stage.batch_size {
                let want_image = rng.random::<f64>() < stage.image_video_ratio;
                let pool = match (want_image, images.is_empty(), videos.is_empty()) {
                    (true, false, _) | (false, _, true) => &images,
                    _ => &videos,
                };
                let item = pool[rng.random_range(0..pool.len())];
                let is_image = item.clip.frames == 1;
                let (t, h, w) = stage.resolution;
                let res = if is_image { (1, h, w) } else { (t, h, w) };
                let clip = fit_clip(&item.clip, res);
                let task = sample_task(&qualified_tasks(&clip, item.edited.is_some()), &cfg.weights, rng)?;
                let bundle = build_condition(&clip, task, &item.caption, rng)?;
                let target = match (&item.edited, task.is_edit()) {
                    (Some(e), true) => fit_clip(e, res),
                    _ => clip,
                };
                let x0 = codec.encode(&target)?;
                let (bundle, outcome) = apply_dropout_traced(&bundle, &cfg.policy, rng);
                if b == 0 && cfg.consistency_every > 0 && step % cfg.consistency_every == 0 {
                    bundle.check_consistency()?;
                }
                let sample = make_flow_sample(&x0, rng)?;
                let scalars = ScalarConditions::new(sample.time, bundle.motion_score)?;
                batch.push(Prepared {
                    bundle,
                    xt: sample.xt,
                    target: sample.v_target,
                    scalars,
                    record: MetricRecord {
                        step,
                        stage: stage.name.clone(),
                        task,
                        is_image,
                        null_text: outcome.null_text,
                        zeroed: outcome.zeroed,
                        loss: f64::NAN,
                        lr,
                    },
                });
            }

            let results = per_sample_gradients(&model, &batch, cfg.threads);
            let mut total: Option<Vec<Vec<f64>>> = None;
            for (p, r) in batch.into_iter().zip(results) {
                let non_finite = || MfmError::NonFiniteLoss { step, task: p.record.task.short_name().into() };
                let (loss, grads) = match r {
                    Ok(v) => v,
                    Err(MfmError::NonFinite { .. }) => return Err(non_finite()),
                    Err(e) => return Err(e),
                };
                if !loss.is_finite() {
                    return Err(non_finite());
                }
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += y;
                            }
                        }
                    }
                }
                log.push(MetricRecord { loss, ..p.record });
            }
            let mut grads = total.expect("batch size is positive");
            let inv = 1.0 / stage.batch_size as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            adam.update(model.params.data_mut(), &grads, lr);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, log })
}

fn per_sample_gradients(model: &MfmModel, batch: &[Prepared], threads: usize) -> Vec<Result<(f64, Vec<Vec<f64>>)>> {
    let run = |p: &Prepared| model.loss_and_gradients(&p.xt, &p.target, &p.bundle, p.scalars);
    if threads <= 1 || batch.len() == 1 {
        return batch.iter().map(run).collect();
    }
    let chunk = batch.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(run).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    })
}

const HEADER: &str = "step\tstage\ttask\tkind\tnull_text\tzeroed\tloss\tlr";

/// Tab-separated metrics log with a header line.
pub fn write_metrics(out: &mut impl Write, log: &[MetricRecord]) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in log {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:e}\t{:e}",
            r.step,
            r.stage,
            r.task,
            if r.is_image { "image" } else { "video" },
            r.null_text as u8,
            r.zeroed as u8,
            r.loss,
            r.lr
        )?;
    }
    Ok(())
}

pub fn read_metrics(input: impl BufRead) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != HEADER {
                return Err(MfmError::Parse { line: 1, message: "unexpected metrics header".into() });
            }
            continue;
        }
        let err = |m: &str| MfmError::Parse { line: i + 1, message: m.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(err("expected 8 fields"));
        }
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(err("flag must be 0 or 1")),
        };
        out.push(MetricRecord {
            step: f[0].parse().map_err(|_| err("bad step"))?,
            stage: f[1].to_string(),
            task: f[2].parse().map_err(|_| err("bad task"))?,
            is_image: match f[3] {
                "image" => true,
                "video" => false,
                _ => return Err(err("kind must be image or video")),
            },
            null_text: flag(f[4])?,
            zeroed: flag(f[5])?,
            loss: f[6].parse().map_err(|_| err("bad loss"))?,
            lr: f[7].parse().map_err(|_| err("bad lr"))?,
        });
    }
    Ok(out)
}
