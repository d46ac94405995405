//! Runs a resolution-progressive recipe on a small mixed image/video corpus.
//!
//! `cargo run --release --example train_toy -- [recipe] [corpus]`

use std::collections::BTreeMap;

use mfm::backbone::{MfmModel, ModelConfig};
use mfm::trainer::{make_synthetic_corpus, parse_recipe, train, CorpusSpec, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mfm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../recipes/");
    let recipe_path = args.get(1).cloned().unwrap_or(format!("{root}toy.recipe"));
    let corpus_path = args.get(2).cloned().unwrap_or(format!("{root}toy.corpus"));
    let recipe = parse_recipe(&std::fs::read_to_string(&recipe_path)?)?;
    let spec = CorpusSpec::parse(&std::fs::read_to_string(&corpus_path)?)?;
    for stage in &recipe {
        println!("{stage}");
    }
    let corpus = make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} corpus items", corpus.len());

    let model = MfmModel::new(&ModelConfig::toy(), 0)?;
    let cfg = TrainConfig { warmup_steps: 5, ..TrainConfig::default() };
    let out = train(&recipe, &corpus, model, &cfg, &mut ChaCha8Rng::seed_from_u64(1))?;

    let mut per_stage: BTreeMap<&str, (usize, f64, usize)> = BTreeMap::new();
    let mut per_task: BTreeMap<String, usize> = BTreeMap::new();
    for r in &out.log {
        let e = per_stage.entry(&r.stage).or_default();
        e.0 += 1;
        e.1 += r.loss;
        e.2 += r.is_image as usize;
        *per_task.entry(r.task.short_name().to_string()).or_default() += 1;
    }
    for (stage, (n, loss, images)) in per_stage {
        println!("stage {stage}: {n} samples, {images} images, mean loss {:.4}", loss / n as f64);
    }
    println!("task counts {per_task:?}");
    let nulls = out.log.iter().filter(|r| r.null_text).count();
    let zeroed = out.log.iter().filter(|r| r.zeroed).count();
    println!("null-text {nulls}, zeroed conditions {zeroed}");
    Ok(())
}
