//! Multi-task joint training: synthetic corpus, weighted task sampling,
//! prompt and condition dropout, the staged recipe and the training loop.

mod corpus;
mod optim;
mod recipe;
mod run;
mod sampling;

pub use corpus::{apply_style, fit_clip, make_synthetic_corpus, Archetype, CorpusItem, CorpusSpec};
pub use optim::Adam;
pub use recipe::{parse_recipe, RecipeStage};
pub use run::{read_metrics, train, write_metrics, MetricRecord, TrainConfig, TrainOutcome};
pub use sampling::{apply_dropout, apply_dropout_traced, sample_task, DropoutOutcome, DropoutPolicy, TaskWeights};
