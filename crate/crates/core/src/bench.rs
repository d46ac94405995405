//! Benchmark construction and reference metrics.
//!
//! Clips are screened for sharpness (variance of the Laplacian of 0–255
//! luminance) and motion (mean frame difference), cut to a fixed length and
//! turned into one condition bundle per task.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{build_condition_with, luminance, motion_proxy, BuildOptions, ConditionBundle};
use crate::container::{load_video, save_video};
use crate::error::{MfmError, Result};
use crate::fixture::{escape, load_bundle, save_bundle, unescape};
use crate::latents::VideoTensor;
use crate::task::TaskTag;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub target_frames: usize,
    pub segments: usize,
    pub blur_threshold: f64,
    pub motion_threshold: f64,
    pub per_task_count: usize,
    pub tasks: Vec<TaskTag>,
    /// Fixed clip length for the extension and first/last-clip tasks.
    pub clip_len: usize,
    pub edit_style: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            target_frames: 97,
            segments: 16,
            blur_threshold: 200.0,
            motion_threshold: 0.02,
            per_task_count: 30,
            tasks: TaskTag::ALL.to_vec(),
            clip_len: 8,
            edit_style: "oil painting".into(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_frames % 4 != 1 {
            return Err(MfmError::Config(format!(
                "target_frames {} is not 1 mod 4",
                self.target_frames
            )));
        }
        if self.segments == 0 || self.segments > self.target_frames {
            return Err(MfmError::Config("segments must be in 1..=target_frames".into()));
        }
        if self.per_task_count == 0 || self.tasks.is_empty() {
            return Err(MfmError::Config("benchmark needs at least one task and sample".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.per_task_count * self.tasks.len()
    }

    /// `key = value` lines over the config fields; `tasks` is comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| MfmError::Parse { line: i + 1, message: m };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let count = || v.parse::<usize>().map_err(|_| err(format!("{k}: expected a count")));
            let real = || v.parse::<f64>().map_err(|_| err(format!("{k}: expected a number")));
            match k {
                "target_frames" => cfg.target_frames = count()?,
                "segments" => cfg.segments = count()?,
                "blur_threshold" => cfg.blur_threshold = real()?,
                "motion_threshold" => cfg.motion_threshold = real()?,
                "per_task_count" => cfg.per_task_count = count()?,
                "clip_len" => cfg.clip_len = count()?,
                "edit_style" => cfg.edit_style = v.to_string(),
                "tasks" => {
                    cfg.tasks = v
                        .split(',')
                        .map(|t| t.parse().map_err(|e: MfmError| err(e.to_string())))
                        .collect::<Result<_>>()?
                }
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for BenchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tasks: Vec<&str> = self.tasks.iter().map(|t| t.short_name()).collect();
        writeln!(f, "target_frames = {}", self.target_frames)?;
        writeln!(f, "segments = {}", self.segments)?;
        writeln!(f, "blur_threshold = {:?}", self.blur_threshold)?;
        writeln!(f, "motion_threshold = {:?}", self.motion_threshold)?;
        writeln!(f, "per_task_count = {}", self.per_task_count)?;
        writeln!(f, "clip_len = {}", self.clip_len)?;
        writeln!(f, "edit_style = {}", self.edit_style)?;
        writeln!(f, "tasks = {}", tasks.join(","))
    }
}

/// Luminance of one frame scaled to `0..=255`.
fn luma_255(frame: &VideoTensor, t: usize) -> Vec<f64> {
    frame
        .frame(t)
        .chunks_exact(frame.channels)
        .map(|p| (luminance(p[0], p[1], p[2]) as f64 + 1.0) * 127.5)
        .collect()
}

/// Reflect-101 index, matching the usual image-library border default.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Variance of the 4-neighbour Laplacian of the first frame's 0–255 luminance.
pub fn blur_score(frame: &VideoTensor) -> f64 {
    let (h, w) = (frame.height, frame.width);
    let y = luma_255(frame, 0);
    let at = |r: isize, c: isize| y[reflect(r, h) * w + reflect(c, w)];
    let mut lap = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            lap.push(at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c));
        }
    }
    let n = lap.len() as f64;
    let mean = lap.iter().sum::<f64>() / n;
    lap.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Whether a clip survives both screens; clips shorter than the target are dropped.
pub fn passes_filters(clip: &VideoTensor, cfg: &BenchConfig) -> bool {
    clip.frames >= cfg.target_frames
        && clip.channels == 3
        && (0..clip.frames).all(|t| blur_score(&clip.frame_tensor(t)) >= cfg.blur_threshold)
        && motion_proxy(clip) > cfg.motion_threshold
}

/// Indices of surviving clips.
pub fn filter_indices(clips: &[VideoTensor], cfg: &BenchConfig) -> Vec<usize> {
    (0..clips.len()).filter(|&i| passes_filters(&clips[i], cfg)).collect()
}

/// Survivors cut to `target_frames`.
pub fn filter_videos(clips: &[VideoTensor], cfg: &BenchConfig) -> Vec<VideoTensor> {
    filter_indices(clips, cfg)
        .into_iter()
        .map(|i| clips[i].truncate_frames(cfg.target_frames))
        .collect()
}

/// `count` contiguous, near-equal frame ranges covering `frames`.
pub fn segment_ranges(frames: usize, count: usize) -> Vec<Range<usize>> {
    (0..count)
        .map(|i| i * frames / count..(i + 1) * frames / count)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSample {
    pub id: String,
    pub task: TaskTag,
    /// Index of the surviving clip the sample was cut from.
    pub clip: usize,
    /// Seed that rebuilds the bundle from the clip.
    pub seed: u64,
    pub bundle: ConditionBundle,
    pub ground_truth: VideoTensor,
}

impl BenchSample {
    /// Path of the sample's files relative to the benchmark root, without extension.
    pub fn stem(&self) -> PathBuf {
        sample_stem(&self.id, self.task)
    }
}

fn sample_stem(id: &str, task: TaskTag) -> PathBuf {
    let number = id.rsplit('-').next().unwrap_or(id);
    Path::new(task.canonical()).join(number)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub config: BenchConfig,
    pub segments: Vec<Range<usize>>,
    pub samples: Vec<BenchSample>,
}

/// Builds `per_task_count` samples for each task from already filtered clips.
pub fn build_benchmark(
    clips: &[VideoTensor],
    captions: &[String],
    cfg: &BenchConfig,
    rng: &mut impl Rng,
) -> Result<Benchmark> {
    cfg.validate()?;
    if clips.len() != captions.len() {
        return Err(MfmError::Config(format!(
            "{} clips but {} captions",
            clips.len(),
            captions.len()
        )));
    }
    if clips.len() < cfg.per_task_count {
        return Err(MfmError::InsufficientClips {
            needed: cfg.per_task_count,
            available: clips.len(),
        });
    }
    if let Some(c) = clips.iter().find(|c| c.frames != cfg.target_frames) {
        return Err(MfmError::shape(
            format!("{}-frame clips", cfg.target_frames),
            format!("{} frames", c.frames),
        ));
    }
    let opts = BuildOptions {
        fixed_clip_len: Some(cfg.clip_len),
        edit_style: cfg.edit_style.clone(),
        ..BuildOptions::default()
    };
    let mut samples = Vec::with_capacity(cfg.total_samples());
    for &task in &cfg.tasks {
        for j in 0..cfg.per_task_count {
            let seed = rng.next_u64();
            let source = if task.is_image() {
                clips[j].frame_tensor(0)
            } else {
                clips[j].clone()
            };
            let bundle = build_condition_with(&source, task, &captions[j], &mut ChaCha8Rng::seed_from_u64(seed), &opts)?;
            samples.push(BenchSample {
                id: format!("{}-{:03}", task.short_name(), j),
                task,
                clip: j,
                seed,
                bundle,
                ground_truth: source,
            });
        }
    }
    Ok(Benchmark {
        config: cfg.clone(),
        segments: segment_ranges(cfg.target_frames, cfg.segments),
        samples,
    })
}

pub const MANIFEST: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "id\ttask\tprompt\tseed\tclip";

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub task: TaskTag,
    pub prompt: String,
    pub seed: u64,
    pub clip: usize,
}

impl Benchmark {
    pub fn manifest_rows(&self) -> Vec<ManifestRow> {
        self.samples
            .iter()
            .map(|s| ManifestRow {
                id: s.id.clone(),
                task: s.task,
                prompt: s.bundle.prompt.clone(),
                seed: s.seed,
                clip: s.clip,
            })
            .collect()
    }

    /// Writes `<root>/<task>/<NNN>.bundle`, `<root>/<task>/<NNN>.video`,
    /// `manifest.tsv` and `config.txt`. Returns the written files in order.
    pub fn write(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for s in &self.samples {
            let stem = root.join(s.stem());
            std::fs::create_dir_all(stem.parent().expect("task directory"))?;
            let (b, v) = (stem.with_extension("bundle"), stem.with_extension("video"));
            save_bundle(&b, &s.bundle)?;
            save_video(&v, &s.ground_truth)?;
            written.push(b);
            written.push(v);
        }
        let manifest = root.join(MANIFEST);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&manifest)?);
        let segs: Vec<String> = self.segments.iter().map(|r| format!("{}+{}", r.start, r.len())).collect();
        writeln!(f, "# segments {}", segs.join(" "))?;
        write_manifest(&mut f, &self.manifest_rows())?;
        f.flush()?;
        written.push(manifest);
        let config = root.join("config.txt");
        std::fs::write(&config, self.config.to_string())?;
        written.push(config);
        Ok(written)
    }
}

pub fn write_manifest(out: &mut impl Write, rows: &[ManifestRow]) -> Result<()> {
    writeln!(out, "{MANIFEST_HEADER}")?;
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.id, r.task, escape(&r.prompt), r.seed, r.clip)?;
    }
    Ok(())
}

/// Reads manifest rows, skipping `#` comment lines.
pub fn read_manifest(input: impl BufRead) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    let mut header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') {
            continue;
        }
        let err = |m: &str| MfmError::Parse { line: i + 1, message: m.to_string() };
        if !header {
            if line != MANIFEST_HEADER {
                return Err(err("unexpected manifest header"));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err("expected 5 fields"));
        }
        rows.push(ManifestRow {
            id: f[0].to_string(),
            task: f[1].parse().map_err(|_| err("bad task"))?,
            prompt: unescape(f[2])?,
            seed: f[3].parse().map_err(|_| err("bad seed"))?,
            clip: f[4].parse().map_err(|_| err("bad clip index"))?,
        });
    }
    Ok(rows)
}

pub fn load_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    read_manifest(std::io::BufReader::new(std::fs::File::open(root.join(MANIFEST))?))
}

/// Bundle of one manifest row.
pub fn load_sample_bundle(root: &Path, row: &ManifestRow) -> Result<ConditionBundle> {
    load_bundle(root.join(sample_stem(&row.id, row.task)).with_extension("bundle"))
}

/// Where the output (or ground truth) video of a row lives under `root`.
pub fn sample_video_path(root: &Path, row: &ManifestRow) -> PathBuf {
    root.join(sample_stem(&row.id, row.task)).with_extension("video")
}

/// Mean squared error after mapping `[-1, 1]` to `[0, 1]`.
fn unit_mse(x: &VideoTensor, y: &VideoTensor) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(MfmError::shape(format!("{:?}", x.dims()), format!("{:?}", y.dims())));
    }
    let n = x.data.len() as f64;
    Ok(x.data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| ((*a as f64 - *b as f64) / 2.0).powi(2))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(x: &VideoTensor, y: &VideoTensor) -> Result<f64> {
    let mse = unit_mse(x, y)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean local SSIM of two `[0, 1]` planes over windows fully inside the
/// plane; planes smaller than the window use one window of the plane's size.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let (wh, ww) = (h.min(11), w.min(11));
    let (gy, gx) = (gaussian_window(wh, 1.5), gaussian_window(ww, 1.5));
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=h - wh {
        for left in 0..=w - ww {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, wy) in gy.iter().enumerate() {
                for (j, wx) in gx.iter().enumerate() {
                    let k = (top + i) * w + left + j;
                    let wt = wy * wx;
                    ma += wt * a[k];
                    mb += wt * b[k];
                    saa += wt * a[k] * a[k];
                    sbb += wt * b[k] * b[k];
                    sab += wt * a[k] * b[k];
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    total / count as f64
}

/// Structural similarity: per frame and channel with an 11×11 Gaussian
/// window (σ = 1.5), averaged.
pub fn ssim(x: &VideoTensor, y: &VideoTensor) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(MfmError::shape(format!("{:?}", x.dims()), format!("{:?}", y.dims())));
    }
    let (t, h, w, c) = x.dims();
    let plane = |v: &VideoTensor, f: usize, ch: usize| -> Vec<f64> {
        v.frame(f).iter().skip(ch).step_by(c).map(|&p| (p as f64 + 1.0) / 2.0).collect()
    };
    let mut total = 0.0;
    for f in 0..t {
        for ch in 0..c {
            total += ssim_plane(&plane(x, f, ch), &plane(y, f, ch), h, w);
        }
    }
    Ok(total / (t * c) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub task: TaskTag,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl BenchReport {
    /// Per-task means of `(psnr, ssim)`; PSNR means are infinite when any row is.
    pub fn task_means(&self) -> BTreeMap<TaskTag, (f64, f64)> {
        let mut acc: BTreeMap<TaskTag, (f64, f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(r.task).or_default();
            e.0 += r.psnr;
            e.1 += r.ssim;
            e.2 += 1;
        }
        acc.into_iter()
            .map(|(t, (p, s, n))| (t, (p / n as f64, s / n as f64)))
            .collect()
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        (
            self.rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            self.rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        )
    }

    /// Tab-separated table: one row per sample, then per-task and overall means.
    pub fn write(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "id\ttask\tpsnr_db\tssim")?;
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{}\t{:.6}", r.id, r.task, fmt_psnr(r.psnr), r.ssim)?;
        }
        for (t, (p, s)) in self.task_means() {
            writeln!(out, "mean\t{t}\t{}\t{s:.6}", fmt_psnr(p))?;
        }
        let (p, s) = self.mean();
        writeln!(out, "mean\tall\t{}\t{s:.6}", fmt_psnr(p))?;
        Ok(())
    }
}

/// Scores every manifest row's output video against its ground truth.
pub fn evaluate(benchmark: &Path, outputs: &Path) -> Result<BenchReport> {
    let rows = load_manifest(benchmark)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let gt = load_video(sample_video_path(benchmark, row))?;
        let path = sample_video_path(outputs, row);
        if !path.exists() {
            return Err(MfmError::Config(format!("no output for sample {} at {}", row.id, path.display())));
        }
        let pred = load_video(&path)?;
        out.push(ReportRow {
            id: row.id.clone(),
            task: row.task,
            psnr: psnr(&pred, &gt)?,
            ssim: ssim(&pred, &gt)?,
        });
    }
    Ok(BenchReport { rows: out })
}

/// Synthetic clip kinds used to exercise the filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeClip {
    /// Checkerboard translating one pixel per frame: sharp and moving.
    SharpMoving,
    /// Same board, one frame repeated.
    SharpStatic,
}

/// Checkerboard clip with cells of `cell` pixels, values in `[-0.8, 0.8]`.
/// The phase offset makes clips built with different `phase` distinct.
pub fn probe_clip(kind: ProbeClip, frames: usize, height: usize, width: usize, cell: usize, phase: usize) -> VideoTensor {
    VideoTensor::from_fn(frames, height, width, 3, |t, y, x, c| {
        let shift = if kind == ProbeClip::SharpMoving { t } else { 0 };
        let on = ((x + shift + phase) / cell + y / cell) % 2 == 0;
        let base = if on { 0.8 } else { -0.8 };
        base * [1.0, 0.9, 0.8][c] as f32
    })
}
