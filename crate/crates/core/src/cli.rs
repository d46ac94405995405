//! Command-line front end.
//!
//! Every command writes exactly one run manifest: the command, its resolved
//! flags (enough to replay it), the seed, SHA-256 hashes of inputs and
//! artifacts, and wall-clock start and end times.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::backbone::{MfmModel, ModelConfig};
use crate::bench::{self, BenchConfig};
use crate::conditioning::{build_condition_with, BuildOptions};
use crate::container::{self, load_video, save_video, write_checkpoint};
use crate::error::{MfmError, Result};
use crate::fixture::{self, load_bundle, save_bundle, FixtureKind};
use crate::flow::{euler_sample, SamplerConfig, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use crate::latents::VideoTensor;
use crate::task::TaskTag;
use crate::trainer::{self, make_synthetic_corpus, parse_recipe, CorpusSpec, TrainConfig};

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "MFM_SEED";

/// Window (in optimiser steps) for the loss-ratio line of a training run.
pub const LOSS_WINDOW: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "mfm", version, about = "Unified multi-task video generation at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the condition bundle of one task from a clip.
    BuildConditions(BuildArgs),
    /// Train a model from a recipe on a synthetic corpus.
    Train(TrainArgs),
    /// Sample a clip for a condition bundle.
    Sample(SampleArgs),
    /// Filter clips and emit the per-task benchmark.
    BenchBuild(BenchBuildArgs),
    /// Score generated outputs against a benchmark.
    BenchEval(BenchEvalArgs),
    /// Print a fixture's header and statistics.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Input clip fixture.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub task: TaskTag,
    #[arg(long, default_value = "")]
    pub prompt: String,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Fixed end-clip length for VEXT and FLC2V; drawn from 8..=16 when absent.
    #[arg(long)]
    pub clip_len: Option<usize>,
    #[arg(long, default_value = "oil painting")]
    pub edit_style: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub recipe: PathBuf,
    /// Corpus spec (`key = value` lines); the default corpus when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `toy`, `2B` or `8B`; ignored when `--model-config` is given.
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the iteration count of every stage.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Gradient worker threads; never changes the result.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory for `checkpoint.mfmc`, `metrics.tsv` and `model.cfg`.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>/run.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Model config; falls back to `model.cfg` beside the checkpoint, then the toy preset.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_GUIDANCE)]
    pub cfg_scale: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchBuildArgs {
    /// Directory of `*.video` clips, captioned by a sibling `*.txt` or the file stem.
    #[arg(long)]
    pub clips: PathBuf,
    /// Benchmark config (`key = value` lines); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>/run.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchEvalArgs {
    #[arg(long)]
    pub bench: PathBuf,
    /// Directory mirroring the benchmark layout with generated `*.video` files.
    #[arg(long)]
    pub outputs: PathBuf,
    /// Report table path.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Record of one command run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Resolved flags in command-line spelling, without the leading dashes.
    pub flags: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Input path to SHA-256.
    pub inputs: Vec<(String, String)>,
    /// Artifact path to SHA-256.
    pub artifacts: Vec<(String, String)>,
    /// Command-specific results such as the loss ratio.
    pub results: Vec<(String, String)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    fn start(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            seed,
            started_unix_ms: now_ms(),
            ..Self::default()
        }
    }

    fn flag(&mut self, name: &str, value: impl ToString) {
        self.flags.push((name.into(), value.to_string()));
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push((path.display().to_string(), sha256_file(path)?));
        Ok(())
    }

    fn artifact(&mut self, path: &Path) -> Result<()> {
        self.artifacts.push((path.display().to_string(), sha256_file(path)?));
        Ok(())
    }

    fn result(&mut self, key: &str, value: impl ToString) {
        self.results.push((key.into(), value.to_string()));
    }

    pub fn flag_value(&self, name: &str) -> Option<&str> {
        self.flags.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn result_value(&self, key: &str) -> Option<&str> {
        self.results.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Artifact hashes keyed by path relative to the `out` flag (or by file
    /// name outside it), so runs into different locations compare.
    pub fn artifact_hashes(&self) -> BTreeMap<String, String> {
        let out = self.flag_value("out").map(PathBuf::from);
        self.artifacts
            .iter()
            .map(|(p, h)| {
                let p = Path::new(p);
                let key = match out.as_deref().and_then(|o| p.strip_prefix(o).ok()) {
                    Some(rel) if !rel.as_os_str().is_empty() => rel.to_string_lossy().into_owned(),
                    _ => p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                };
                (key, h.clone())
            })
            .collect()
    }

    /// Command line that repeats the run, with `overrides` replacing flag values.
    pub fn replay_args(&self, overrides: &[(&str, &str)]) -> Vec<String> {
        let mut args = vec!["mfm".to_string(), self.command.clone()];
        let positional = self.command == "inspect";
        for (k, v) in &self.flags {
            let v = overrides.iter().find(|(o, _)| o == k).map_or(v.as_str(), |(_, o)| o);
            if !positional {
                args.push(format!("--{k}"));
            }
            args.push(v.to_string());
        }
        args
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| MfmError::Parse { line: i + 1, message: msg.to_string() };
            let (key, value) = line.split_once('\t').ok_or_else(|| err("expected a tab-separated field"))?;
            let pair = || -> Result<(String, String)> {
                let (a, b) = value.split_once('\t').ok_or_else(|| err("expected two values"))?;
                Ok((fixture::unescape(a)?, fixture::unescape(b)?))
            };
            match key {
                "command" => m.command = value.to_string(),
                "seed" => m.seed = Some(value.parse().map_err(|_| err("bad seed"))?),
                "started_unix_ms" => m.started_unix_ms = value.parse().map_err(|_| err("bad timestamp"))?,
                "finished_unix_ms" => m.finished_unix_ms = value.parse().map_err(|_| err("bad timestamp"))?,
                "flag" => m.flags.push(pair()?),
                "input" => m.inputs.push(pair()?),
                "artifact" => m.artifacts.push(pair()?),
                "result" => m.results.push(pair()?),
                _ => return Err(err("unknown manifest field")),
            }
        }
        Ok(m)
    }
}

impl fmt::Display for RunManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = fixture::escape;
        writeln!(f, "command\t{}", self.command)?;
        if let Some(s) = self.seed {
            writeln!(f, "seed\t{s}")?;
        }
        for (k, v) in &self.flags {
            writeln!(f, "flag\t{}\t{}", e(k), e(v))?;
        }
        for (p, h) in &self.inputs {
            writeln!(f, "input\t{}\t{h}", e(p))?;
        }
        for (p, h) in &self.artifacts {
            writeln!(f, "artifact\t{}\t{h}", e(p))?;
        }
        for (k, v) in &self.results {
            writeln!(f, "result\t{}\t{}", e(k), e(v))?;
        }
        writeln!(f, "started_unix_ms\t{}", self.started_unix_ms)?;
        writeln!(f, "finished_unix_ms\t{}", self.finished_unix_ms)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn finish(mut manifest: RunManifest, path: &Path) -> Result<RunManifest> {
    manifest.finished_unix_ms = now_ms();
    manifest.write(path)?;
    Ok(manifest)
}

pub fn cmd_build_conditions(a: &BuildArgs) -> Result<RunManifest> {
    let mut m = RunManifest::start("build-conditions", Some(a.seed));
    m.flag("input", a.input.display());
    m.flag("task", a.task);
    m.flag("prompt", &a.prompt);
    m.flag("seed", a.seed);
    if let Some(n) = a.clip_len {
        m.flag("clip-len", n);
    }
    m.flag("edit-style", &a.edit_style);
    m.flag("out", a.out.display());
    m.input(&a.input)?;

    let clip = load_video(&a.input)?;
    let opts = BuildOptions {
        fixed_clip_len: a.clip_len,
        edit_style: a.edit_style.clone(),
        ..BuildOptions::default()
    };
    let bundle = build_condition_with(&clip, a.task, &a.prompt, &mut ChaCha8Rng::seed_from_u64(a.seed), &opts)?;
    save_bundle(&a.out, &bundle)?;
    m.artifact(&a.out)?;
    m.result("layout", format!("{:?}", bundle.layout));
    m.result("motion_score", bundle.motion_score);
    finish(m, &a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".manifest")))
}

fn resolve_config(preset: &str, file: Option<&Path>) -> Result<ModelConfig> {
    match file {
        Some(p) => ModelConfig::parse(&std::fs::read_to_string(p)?),
        None => ModelConfig::preset(preset),
    }
}

/// Independent streams a training run derives from its seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSeeds {
    pub model: u64,
    pub corpus: u64,
    pub train: u64,
}

impl TrainSeeds {
    pub fn derive(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Self {
            model: master.next_u64(),
            corpus: master.next_u64(),
            train: master.next_u64(),
        }
    }
}

/// Largest model the trainer runs on a CPU.
const TRAINABLE_PARAMETERS: usize = 50_000_000;

pub fn cmd_train(a: &TrainArgs) -> Result<RunManifest> {
    let mut m = RunManifest::start("train", Some(a.seed));
    m.flag("recipe", a.recipe.display());
    if let Some(c) = &a.corpus {
        m.flag("corpus", c.display());
    }
    m.flag("preset", &a.preset);
    if let Some(c) = &a.model_config {
        m.flag("model-config", c.display());
    }
    m.flag("seed", a.seed);
    if let Some(n) = a.iterations {
        m.flag("iterations", n);
    }
    m.flag("out", a.out.display());

    let config = resolve_config(&a.preset, a.model_config.as_deref())?;
    config.validate()?;
    let count = config.parameter_count() + config.adapter().parameter_count();
    if count > TRAINABLE_PARAMETERS {
        return Err(MfmError::Config(format!(
            "preset {} has {count} parameters ({:.2}B); only configuration validation is supported at this scale",
            config.name,
            count as f64 / 1e9
        )));
    }
    m.input(&a.recipe)?;
    let mut recipe = parse_recipe(&std::fs::read_to_string(&a.recipe)?)?;
    if let Some(n) = a.iterations {
        for s in &mut recipe {
            s.iterations = n;
        }
    }
    let spec = match &a.corpus {
        Some(p) => {
            m.input(p)?;
            CorpusSpec::parse(&std::fs::read_to_string(p)?)?
        }
        None => CorpusSpec::default(),
    };
    if let Some(p) = &a.model_config {
        m.input(p)?;
    }

    let seeds = TrainSeeds::derive(a.seed);
    let corpus = make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(seeds.corpus))?;
    let model = MfmModel::new(&config, seeds.model)?;
    let mut init = Vec::new();
    write_checkpoint(&mut init, &model.params.to_named())?;
    m.result("init_checkpoint_sha256", sha256_hex(&init));
    m.result("parameters", count);

    let mut cfg = TrainConfig::default();
    if let Some(t) = a.threads {
        cfg.threads = t.max(1);
    }
    let outcome = trainer::train(&recipe, &corpus, model, &cfg, &mut ChaCha8Rng::seed_from_u64(seeds.train))?;

    std::fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("checkpoint.mfmc");
    outcome.model.save(&ckpt)?;
    let metrics = a.out.join("metrics.tsv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&metrics)?);
    trainer::write_metrics(&mut f, &outcome.log)?;
    f.flush()?;
    drop(f);
    let cfg_path = a.out.join("model.cfg");
    std::fs::write(&cfg_path, config.to_string())?;
    for p in [&ckpt, &metrics, &cfg_path] {
        m.artifact(p)?;
    }
    let steps = outcome.step_losses().len();
    m.result("steps", steps);
    if let Some(last) = outcome.step_losses().last() {
        m.result("final_loss", last);
    }
    let window = LOSS_WINDOW.min(steps / 2);
    if let Some(r) = outcome.loss_ratio(window) {
        m.result("loss_window", window);
        m.result("loss_ratio", r);
    }
    finish(m, &a.manifest.clone().unwrap_or_else(|| a.out.join("run.manifest")))
}

pub fn cmd_sample(a: &SampleArgs) -> Result<RunManifest> {
    let mut m = RunManifest::start("sample", Some(a.seed));
    m.flag("checkpoint", a.checkpoint.display());
    m.flag("bundle", a.bundle.display());
    let config_path = a.model_config.clone().or_else(|| {
        let sibling = a.checkpoint.with_file_name("model.cfg");
        sibling.exists().then_some(sibling)
    });
    if let Some(p) = &config_path {
        m.flag("model-config", p.display());
    }
    m.flag("steps", a.steps);
    m.flag("cfg-scale", a.cfg_scale);
    m.flag("seed", a.seed);
    m.flag("out", a.out.display());

    let sampler = SamplerConfig { steps: a.steps, guidance_scale: a.cfg_scale };
    sampler.validate()?;
    let config = resolve_config("toy", config_path.as_deref())?;
    m.input(&a.checkpoint)?;
    m.input(&a.bundle)?;
    if let Some(p) = &config_path {
        m.input(p)?;
    }
    let model = MfmModel::load(&config, &a.checkpoint)?;
    let bundle = load_bundle(&a.bundle)?;
    let codec = config.codec()?;
    let frames = bundle.frames();
    let shape = codec.latent_shape(frames, bundle.pixel.height, bundle.pixel.width)?;
    let null = bundle.with_null_prompt();
    let latent = euler_sample(&model, &bundle, &null, &sampler, shape, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let video = codec.decode(&latent, frames)?;
    save_video(&a.out, &video)?;
    m.artifact(&a.out)?;
    finish(m, &a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".manifest")))
}

/// `*.video` files of a directory in name order with their captions.
pub fn read_clip_dir(dir: &Path) -> Result<Vec<(PathBuf, VideoTensor, String)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "video"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let clip = load_video(&p)?;
            let txt = p.with_extension("txt");
            let caption = if txt.exists() {
                std::fs::read_to_string(&txt)?.trim().to_string()
            } else {
                p.file_stem().map(|s| s.to_string_lossy().replace('_', " ")).unwrap_or_default()
            };
            Ok((p, clip, caption))
        })
        .collect()
}

pub fn cmd_bench_build(a: &BenchBuildArgs) -> Result<RunManifest> {
    let mut m = RunManifest::start("bench-build", Some(a.seed));
    m.flag("clips", a.clips.display());
    if let Some(c) = &a.config {
        m.flag("config", c.display());
    }
    m.flag("seed", a.seed);
    m.flag("out", a.out.display());

    let cfg = match &a.config {
        Some(p) => {
            m.input(p)?;
            BenchConfig::parse(&std::fs::read_to_string(p)?)?
        }
        None => BenchConfig::default(),
    };
    let entries = read_clip_dir(&a.clips)?;
    for (p, _, _) in &entries {
        m.input(p)?;
    }
    let clips: Vec<VideoTensor> = entries.iter().map(|(_, c, _)| c.clone()).collect();
    let kept = bench::filter_indices(&clips, &cfg);
    m.result("clips", clips.len());
    m.result("kept", kept.len());
    let survivors: Vec<VideoTensor> = kept.iter().map(|&i| clips[i].truncate_frames(cfg.target_frames)).collect();
    let captions: Vec<String> = kept.iter().map(|&i| entries[i].2.clone()).collect();
    let benchmark = bench::build_benchmark(&survivors, &captions, &cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    std::fs::create_dir_all(&a.out)?;
    for p in benchmark.write(&a.out)? {
        m.artifact(&p)?;
    }
    m.result("samples", benchmark.samples.len());
    finish(m, &a.manifest.clone().unwrap_or_else(|| a.out.join("run.manifest")))
}

pub fn cmd_bench_eval(a: &BenchEvalArgs) -> Result<(RunManifest, bench::BenchReport)> {
    let mut m = RunManifest::start("bench-eval", None);
    m.flag("bench", a.bench.display());
    m.flag("outputs", a.outputs.display());
    m.flag("out", a.out.display());
    m.input(&a.bench.join(bench::MANIFEST))?;
    let out_manifest = a.outputs.join(bench::MANIFEST);
    if out_manifest.exists() {
        let want: Vec<String> = bench::load_manifest(&a.bench)?.into_iter().map(|r| r.id).collect();
        let got: Vec<String> = bench::load_manifest(&a.outputs)?.into_iter().map(|r| r.id).collect();
        if want != got {
            return Err(MfmError::Config("sample ids of the outputs differ from the benchmark".into()));
        }
    }
    let report = bench::evaluate(&a.bench, &a.outputs)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    report.write(&mut f)?;
    f.flush()?;
    drop(f);
    m.artifact(&a.out)?;
    let (p, s) = report.mean();
    m.result("mean_psnr_db", p);
    m.result("mean_ssim", s);
    let m = finish(m, &a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".manifest")))?;
    Ok((m, report))
}

fn stats(values: impl Iterator<Item = f64>) -> String {
    let (mut n, mut sum, mut lo, mut hi) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if n == 0 {
        return "empty".into();
    }
    format!("n={n} min={lo:.6} max={hi:.6} mean={:.6}", sum / n as f64)
}

/// Human-readable description of a fixture file.
pub fn inspect(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("file {} ({} bytes, sha256 {})", path.display(), bytes.len(), sha256_hex(&bytes)));
    match fixture::detect(&bytes) {
        Some(FixtureKind::Tensor) => {
            let t = container::read_tensor(&mut bytes.as_slice())?;
            line(format!("tensor dtype {} shape {:?}", t.payload.dtype().name(), t.dims));
            line(format!("values {}", stats(t.payload.to_f64().into_iter())));
        }
        Some(FixtureKind::Bundle) => {
            let b = fixture::read_bundle(bytes.as_slice())?;
            line(format!("bundle task {} ({})", b.task, b.task.canonical()));
            line(format!("prompt {:?}", b.prompt));
            line(format!("motion_score {}", b.motion_score));
            line(format!("layout {:?}", b.layout));
            let (t, h, w, _) = b.pixel.dims();
            line(format!("frames {t} height {h} width {w}"));
            line(format!("pixel {}", stats(b.pixel.data.iter().map(|&v| v as f64))));
            line(format!("depth {}", stats(b.depth.data.iter().map(|&v| v as f64))));
            line(format!("mask {}", stats(b.mask.data.iter().map(|&v| v as f64))));
            let conditioned = b.mask_frame_sums().iter().filter(|&&s| s > 0).count();
            line(format!("frames with conditions {conditioned}/{t}"));
        }
        Some(FixtureKind::Checkpoint) => {
            let entries = container::read_checkpoint(&mut bytes.as_slice())?;
            let total: usize = entries.iter().map(|e| e.data.len()).sum();
            line(format!("checkpoint {} tensors, {total} parameters", entries.len()));
            for e in &entries {
                line(format!("  {} {:?} {}", e.name, e.shape, stats(e.data.iter().copied())));
            }
        }
        None => return Err(MfmError::Format(format!("{} is not a recognised fixture", path.display()))),
    }
    Ok(out)
}

/// Process exit code for an error: 2 for validation failures, 3 for
/// numeric aborts, 1 for I/O.
pub fn exit_code(e: &MfmError) -> i32 {
    match e {
        MfmError::NonFinite { .. } | MfmError::NonFiniteSampler { .. } | MfmError::NonFiniteLoss { .. } => 3,
        MfmError::Io(_) => 1,
        _ => 2,
    }
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    let manifest = match cli.command {
        Command::BuildConditions(a) => cmd_build_conditions(&a)?,
        Command::Train(a) => cmd_train(&a)?,
        Command::Sample(a) => cmd_sample(&a)?,
        Command::BenchBuild(a) => cmd_bench_build(&a)?,
        Command::BenchEval(a) => {
            let (m, report) = cmd_bench_eval(&a)?;
            report.write(out)?;
            m
        }
        Command::Inspect(a) => {
            write!(out, "{}", inspect(&a.path)?)?;
            return Ok(());
        }
    };
    for (k, v) in &manifest.results {
        writeln!(out, "{k}\t{v}")?;
    }
    for (p, h) in &manifest.artifacts {
        writeln!(out, "wrote {p} sha256 {h}")?;
    }
    Ok(())
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
