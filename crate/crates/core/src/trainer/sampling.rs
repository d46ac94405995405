use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::conditioning::ConditionBundle;
use crate::error::{MfmError, Result};
use crate::task::TaskTag;

/// Relative selection weight per task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskWeights {
    pub weights: BTreeMap<TaskTag, f64>,
}

impl Default for TaskWeights {
    /// T2I, T2V and I2V are drawn three times as often as the rest.
    fn default() -> Self {
        let weights = TaskTag::ALL
            .into_iter()
            .map(|t| {
                let w = if matches!(t, TaskTag::T2I | TaskTag::T2V | TaskTag::I2V) {
                    3.0
                } else {
                    1.0
                };
                (t, w)
            })
            .collect();
        Self { weights }
    }
}

impl TaskWeights {
    pub fn weight(&self, task: TaskTag) -> f64 {
        self.weights.get(&task).copied().unwrap_or(0.0)
    }

    /// Exact selection probabilities over `qualified`.
    pub fn probabilities(&self, qualified: &BTreeSet<TaskTag>) -> Result<Vec<(TaskTag, f64)>> {
        let total: f64 = qualified.iter().map(|&t| self.weight(t)).sum();
        if qualified.is_empty() || !(total > 0.0) {
            return Err(MfmError::EmptyTaskSet);
        }
        Ok(qualified.iter().map(|&t| (t, self.weight(t) / total)).collect())
    }
}

/// Categorical draw over `qualified`, proportional to the weights.
pub fn sample_task(qualified: &BTreeSet<TaskTag>, weights: &TaskWeights, rng: &mut impl Rng) -> Result<TaskTag> {
    let probs = weights.probabilities(qualified)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(t, p) in &probs {
        acc += p;
        if u < acc {
            return Ok(t);
        }
    }
    Ok(probs.last().expect("non-empty").0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutPolicy {
    pub null_text_rate_video: f64,
    pub null_text_rate_image: f64,
    pub zero_condition_rate: f64,
}

impl Default for DropoutPolicy {
    fn default() -> Self {
        Self {
            null_text_rate_video: 0.10,
            null_text_rate_image: 0.30,
            zero_condition_rate: 0.10,
        }
    }
}

impl DropoutPolicy {
    pub fn none() -> Self {
        Self {
            null_text_rate_video: 0.0,
            null_text_rate_image: 0.0,
            zero_condition_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.null_text_rate_video, self.null_text_rate_image, self.zero_condition_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(MfmError::Config(format!("dropout rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DropoutOutcome {
    pub null_text: bool,
    pub zeroed: bool,
}

/// Dropout with a record of what was dropped. Exactly one uniform is drawn
/// per call whatever the task, so streams stay aligned across tasks.
pub fn apply_dropout_traced(
    bundle: &ConditionBundle,
    policy: &DropoutPolicy,
    rng: &mut impl Rng,
) -> (ConditionBundle, DropoutOutcome) {
    let u: f64 = rng.random();
    let mut outcome = DropoutOutcome::default();
    let out = match bundle.task {
        TaskTag::T2V | TaskTag::T2I => {
            let rate = if bundle.task == TaskTag::T2V {
                policy.null_text_rate_video
            } else {
                policy.null_text_rate_image
            };
            if u < rate {
                outcome.null_text = true;
                bundle.with_null_prompt()
            } else {
                bundle.clone()
            }
        }
        _ => {
            if u < policy.zero_condition_rate {
                outcome.zeroed = true;
                bundle.with_zeroed_conditions()
            } else {
                bundle.clone()
            }
        }
    };
    (out, outcome)
}

pub fn apply_dropout(bundle: &ConditionBundle, policy: &DropoutPolicy, rng: &mut impl Rng) -> ConditionBundle {
    apply_dropout_traced(bundle, policy, rng).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::build_condition;
    use crate::latents::VideoTensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_and_probabilities() {
        let w = TaskWeights::default();
        assert_eq!(w.weight(TaskTag::T2V), 3.0 * w.weight(TaskTag::VSR));
        let video: BTreeSet<_> = TaskTag::VIDEO.into_iter().collect();
        let p = w.probabilities(&video).unwrap();
        let t2v = p.iter().find(|(t, _)| *t == TaskTag::T2V).unwrap().1;
        assert!((t2v - 3.0 / 14.0).abs() < 1e-15);
        assert!(w.probabilities(&BTreeSet::new()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let single: BTreeSet<_> = [TaskTag::T2V].into_iter().collect();
        for _ in 0..100 {
            assert_eq!(sample_task(&single, &w, &mut rng).unwrap(), TaskTag::T2V);
        }
    }

    #[test]
    fn degenerate_dropout_rates() {
        let clip = VideoTensor::filled(5, 16, 16, 3, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t2v = build_condition(&clip, TaskTag::T2V, "a clip", &mut rng).unwrap();
        let always = DropoutPolicy {
            null_text_rate_video: 1.0,
            ..DropoutPolicy::default()
        };
        let (b, o) = apply_dropout_traced(&t2v, &always, &mut rng);
        assert!(b.prompt.is_empty() && o.null_text);
        let i2v = build_condition(&clip, TaskTag::I2V, "a clip", &mut rng).unwrap();
        for _ in 0..50 {
            assert_eq!(apply_dropout(&i2v, &DropoutPolicy::none(), &mut rng), i2v);
            assert_eq!(apply_dropout(&t2v, &DropoutPolicy::none(), &mut rng), t2v);
        }
        let zero = DropoutPolicy {
            zero_condition_rate: 1.0,
            ..DropoutPolicy::default()
        };
        let (b, o) = apply_dropout_traced(&i2v, &zero, &mut rng);
        assert!(o.zeroed && b.prompt == i2v.prompt);
        assert!(b.mask.data.iter().all(|&m| m == 0.0));
        assert!(DropoutPolicy { zero_condition_rate: 1.5, ..DropoutPolicy::default() }.validate().is_err());
    }
}
