//! Unified 3D condition construction for every task.
//!
//! A [`ConditionBundle`] carries a pixel condition, a depth condition and a
//! binary mask over the clip's full `T×H×W` grid. Mask value 1 marks regions
//! given as conditioning data; 0 marks regions to be generated. Pixel and
//! depth conditions are zero wherever the mask is zero.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{MfmError, Result};
use crate::latents::VideoTensor;
use crate::task::TaskTag;

/// Number of channels in the concatenated condition: pixel(3) | depth(1) | mask(1).
pub const CONDITION_CHANNELS: usize = 5;

/// Clip length range used by extension and first-last-clip tasks.
pub const CLIP_LEN_MIN: usize = 8;
pub const CLIP_LEN_MAX: usize = 16;
/// Shortest clip that qualifies for the two-clip tasks.
pub const TWO_CLIP_MIN_FRAMES: usize = 17;

pub const SR_FACTOR_MIN: usize = 2;
pub const SR_FACTOR_MAX: usize = 6;

const TASK_SUFFIX_OPEN: &str = " [task: ";

/// Rec. 601 luma weights.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// How a bundle's conditioned regions were laid out. Recorded so that
/// random draws (clip lengths, rectangles, factors) are reproducible from
/// fixtures and manifests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConditionLayout {
    /// Nothing conditioned.
    Empty,
    /// Whole frames `[start, start+len)` conditioned.
    Frames(Vec<(usize, usize)>),
    /// Interior rectangle left for generation.
    Interior {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    /// Border bands left for generation.
    Border {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
    Grayscale,
    Downsampled { factor: usize },
    Full,
}

impl fmt::Display for ConditionLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionLayout::Empty => write!(f, "empty"),
            ConditionLayout::Frames(ranges) => {
                write!(f, "frames")?;
                for (s, l) in ranges {
                    write!(f, " {s}+{l}")?;
                }
                Ok(())
            }
            ConditionLayout::Interior {
                top,
                left,
                height,
                width,
            } => write!(f, "interior {top} {left} {height} {width}"),
            ConditionLayout::Border {
                top,
                bottom,
                left,
                right,
            } => write!(f, "border {top} {bottom} {left} {right}"),
            ConditionLayout::Grayscale => write!(f, "grayscale"),
            ConditionLayout::Downsampled { factor } => write!(f, "downsampled {factor}"),
            ConditionLayout::Full => write!(f, "full"),
        }
    }
}

impl FromStr for ConditionLayout {
    type Err = MfmError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MfmError::Format(format!("bad layout {s:?}"));
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or_else(bad)?;
        let nums = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<usize>> {
            parts.map(|p| p.parse().map_err(|_| bad())).collect()
        };
        Ok(match kind {
            "empty" => ConditionLayout::Empty,
            "grayscale" => ConditionLayout::Grayscale,
            "full" => ConditionLayout::Full,
            "frames" => ConditionLayout::Frames(
                parts
                    .map(|p| {
                        let (a, b) = p.split_once('+').ok_or_else(bad)?;
                        Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
                    })
                    .collect::<Result<_>>()?,
            ),
            "interior" => match nums(parts)?[..] {
                [top, left, height, width] => ConditionLayout::Interior {
                    top,
                    left,
                    height,
                    width,
                },
                _ => return Err(bad()),
            },
            "border" => match nums(parts)?[..] {
                [top, bottom, left, right] => ConditionLayout::Border {
                    top,
                    bottom,
                    left,
                    right,
                },
                _ => return Err(bad()),
            },
            "downsampled" => match nums(parts)?[..] {
                [factor] => ConditionLayout::Downsampled { factor },
                _ => return Err(bad()),
            },
            _ => return Err(bad()),
        })
    }
}

/// The unified per-task conditioning input.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    pub pixel: VideoTensor,
    pub depth: VideoTensor,
    pub mask: VideoTensor,
    pub task: TaskTag,
    pub prompt: String,
    pub motion_score: f64,
    pub layout: ConditionLayout,
}

impl ConditionBundle {
    pub fn frames(&self) -> usize {
        self.pixel.frames
    }

    /// Channel-concatenated `T×H×W×5` condition tensor.
    pub fn stacked(&self) -> VideoTensor {
        let (t, h, w, _) = self.pixel.dims();
        VideoTensor::from_fn(t, h, w, CONDITION_CHANNELS, |f, y, x, c| match c {
            0..=2 => self.pixel.at(f, y, x, c),
            3 => self.depth.at(f, y, x, 0),
            _ => self.mask.at(f, y, x, 0),
        })
    }

    /// Copy with all three condition tensors zeroed; text is kept.
    pub fn with_zeroed_conditions(&self) -> ConditionBundle {
        let mut b = self.clone();
        b.pixel.data.iter_mut().for_each(|v| *v = 0.0);
        b.depth.data.iter_mut().for_each(|v| *v = 0.0);
        b.mask.data.iter_mut().for_each(|v| *v = 0.0);
        b
    }

    /// Copy with the null prompt and identical 3D conditions.
    pub fn with_null_prompt(&self) -> ConditionBundle {
        let mut b = self.clone();
        b.prompt.clear();
        b
    }

    /// Checks shared grids, binary mask, and zero conditions outside the mask.
    pub fn check_consistency(&self) -> Result<()> {
        if !self.pixel.same_grid(&self.depth) || !self.pixel.same_grid(&self.mask) {
            return Err(MfmError::shape(
                format!("{:?}", self.pixel.dims()),
                format!("depth {:?} / mask {:?}", self.depth.dims(), self.mask.dims()),
            ));
        }
        if self.pixel.channels != 3 || self.depth.channels != 1 || self.mask.channels != 1 {
            return Err(MfmError::Dimension("condition channels must be 3/1/1".into()));
        }
        let (t, h, w, _) = self.pixel.dims();
        for f in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let m = self.mask.at(f, y, x, 0);
                    if m != 0.0 && m != 1.0 {
                        return Err(MfmError::Format(format!("mask value {m} is not binary")));
                    }
                    if m == 0.0
                        && (self.depth.at(f, y, x, 0) != 0.0
                            || (0..3).any(|c| self.pixel.at(f, y, x, c) != 0.0))
                    {
                        return Err(MfmError::Format(format!(
                            "non-zero condition under zero mask at ({f},{y},{x})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-frame count of mask-1 pixels.
    pub fn mask_frame_sums(&self) -> Vec<usize> {
        (0..self.mask.frames)
            .map(|f| self.mask.frame(f).iter().filter(|&&m| m == 1.0).count())
            .collect()
    }
}

/// Appends the bracketed task name.
pub fn with_task_suffix(prompt: &str, task: TaskTag) -> String {
    format!("{prompt}{TASK_SUFFIX_OPEN}{}]", task.canonical())
}

/// Splits `"<base> [task: <name>]"` into `(base, task)`.
pub fn parse_task_suffix(prompt: &str) -> Option<(&str, TaskTag)> {
    let body = prompt.strip_suffix(']')?;
    let at = body.rfind(TASK_SUFFIX_OPEN)?;
    let task = body[at + TASK_SUFFIX_OPEN.len()..].parse().ok()?;
    Some((&prompt[..at], task))
}

/// Style instruction used for the editing tasks.
pub fn edit_instruction(task: TaskTag, style: &str) -> String {
    let subject = if task.is_image() { "image" } else { "video" };
    format!("change the {subject} to {style} style")
}

/// Tunables for [`build_condition_with`].
#[derive(Clone, Debug)]
pub struct BuildOptions {
    /// Fixed clip length for VEXT/FLC2V; `None` draws from `8..=16`.
    pub fixed_clip_len: Option<usize>,
    /// Gaussian radius of the depth proxy.
    pub depth_radius: usize,
    /// Style named in editing instructions.
    pub edit_style: String,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            fixed_clip_len: None,
            depth_radius: 2,
            edit_style: "oil painting".into(),
        }
    }
}

pub fn luminance(r: f32, g: f32, b: f32) -> f32 {
    LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
}

fn frame_luminance(clip: &VideoTensor, f: usize) -> Vec<f32> {
    clip.frame(f)
        .chunks_exact(3)
        .map(|p| luminance(p[0], p[1], p[2]))
        .collect()
}

fn require_rgb(clip: &VideoTensor) -> Result<()> {
    if clip.channels != 3 {
        return Err(MfmError::shape("3 channels", format!("{} channels", clip.channels)));
    }
    Ok(())
}

fn gaussian_kernel(radius: usize) -> Vec<f64> {
    if radius == 0 {
        return vec![1.0];
    }
    let sigma = radius as f64 / 2.0;
    let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|k| k / total).collect()
}

/// Separable Gaussian blur of a single-channel plane with edge clamping.
pub fn gaussian_blur_plane(plane: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    let kernel = gaussian_kernel(radius);
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * plane[y * width + clamp(x as isize + k as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Depth stand-in: per-frame Gaussian-smoothed inverse luminance in `[0, 1]`.
pub fn depth_proxy(clip: &VideoTensor) -> Result<VideoTensor> {
    depth_proxy_with_radius(clip, BuildOptions::default().depth_radius)
}

pub fn depth_proxy_with_radius(clip: &VideoTensor, radius: usize) -> Result<VideoTensor> {
    require_rgb(clip)?;
    let (t, h, w, _) = clip.dims();
    let mut out = VideoTensor::zeros(t, h, w, 1);
    for f in 0..t {
        let inv: Vec<f64> = frame_luminance(clip, f)
            .into_iter()
            .map(|y| 1.0 - (y as f64 + 1.0) / 2.0)
            .collect();
        let smooth = gaussian_blur_plane(&inv, h, w, radius);
        for (dst, v) in out.frame_mut(f).iter_mut().zip(smooth) {
            *dst = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Mean absolute inter-frame luminance difference; 0 for single images.
pub fn motion_proxy(clip: &VideoTensor) -> f64 {
    if clip.frames < 2 || clip.channels != 3 {
        return 0.0;
    }
    let mut total = 0.0f64;
    let mut prev = frame_luminance(clip, 0);
    for f in 1..clip.frames {
        let cur = frame_luminance(clip, f);
        total += prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| (*b as f64 - *a as f64).abs())
            .sum::<f64>();
        prev = cur;
    }
    total / ((clip.frames - 1) * clip.height * clip.width) as f64
}

/// Tasks a clip can train or be evaluated on.
pub fn qualified_tasks(clip: &VideoTensor, has_edit_pair: bool) -> BTreeSet<TaskTag> {
    let pool: &[TaskTag] = if clip.frames == 1 {
        &TaskTag::IMAGE
    } else {
        &TaskTag::VIDEO
    };
    pool.iter()
        .copied()
        .filter(|&t| has_edit_pair || !t.is_edit())
        .filter(|&t| {
            clip.frames >= TWO_CLIP_MIN_FRAMES || !matches!(t, TaskTag::VEXT | TaskTag::FLC2V)
        })
        .collect()
}

/// Builds the bundle for `task` with default options.
pub fn build_condition(
    clip: &VideoTensor,
    task: TaskTag,
    prompt: &str,
    rng: &mut impl Rng,
) -> Result<ConditionBundle> {
    build_condition_with(clip, task, prompt, rng, &BuildOptions::default())
}

pub fn build_condition_with(
    clip: &VideoTensor,
    task: TaskTag,
    prompt: &str,
    rng: &mut impl Rng,
    opts: &BuildOptions,
) -> Result<ConditionBundle> {
    require_rgb(clip)?;
    clip.check_codec_shape()?;
    let (t, h, w, _) = clip.dims();
    let mismatch = |reason: String| MfmError::TaskMismatch {
        task: task.short_name().into(),
        reason,
    };
    if task.is_image() && t != 1 {
        return Err(mismatch(format!("image task on a {t}-frame clip")));
    }
    if !task.is_image() && t < 3 {
        return Err(mismatch(format!("video task on a {t}-frame clip")));
    }
    if task.is_text_only() && prompt.trim().is_empty() {
        return Err(MfmError::EmptyPrompt(task.short_name().into()));
    }

    // `source` is what the pixel condition shows where the mask is 1.
    let mut source = clip.clone();
    let mut mask = VideoTensor::zeros(t, h, w, 1);
    let layout = match task {
        TaskTag::T2V | TaskTag::T2I => ConditionLayout::Empty,
        TaskTag::I2V => ConditionLayout::Frames(vec![(0, 1)]),
        TaskTag::FLF2V => ConditionLayout::Frames(vec![(0, 1), (t - 1, 1)]),
        TaskTag::VEXT => {
            let k = pick_clip_len(t, 0, opts, rng).map_err(|r| mismatch(r))?;
            ConditionLayout::Frames(vec![(0, k)])
        }
        TaskTag::FLC2V => {
            if t < TWO_CLIP_MIN_FRAMES {
                return Err(mismatch(format!(
                    "needs at least {TWO_CLIP_MIN_FRAMES} frames, clip has {t}"
                )));
            }
            let head = pick_clip_len(t, CLIP_LEN_MIN, opts, rng).map_err(|r| mismatch(r))?;
            let tail = pick_clip_len(t, head, opts, rng).map_err(|r| mismatch(r))?;
            ConditionLayout::Frames(vec![(0, head), (t - tail, tail)])
        }
        TaskTag::VINP | TaskTag::IINP => interior_rectangle(h, w, rng),
        TaskTag::VOUTP | TaskTag::IOUTP => border_bands(h, w, rng),
        TaskTag::VCOLOR | TaskTag::ICOLOR => {
            for f in 0..t {
                let lum = frame_luminance(clip, f);
                for (px, y) in source.frame_mut(f).chunks_exact_mut(3).zip(lum) {
                    px.fill(y);
                }
            }
            ConditionLayout::Grayscale
        }
        TaskTag::VSR | TaskTag::SISR => {
            let factor = rng.random_range(SR_FACTOR_MIN..=SR_FACTOR_MAX);
            source = area_down_nearest_up(clip, factor);
            ConditionLayout::Downsampled { factor }
        }
        TaskTag::VEDIT | TaskTag::IEDIT => ConditionLayout::Full,
    };
    fill_mask(&mut mask, &layout);

    let depth_full = depth_proxy_with_radius(clip, opts.depth_radius)?;
    let mut pixel = VideoTensor::zeros(t, h, w, 3);
    let mut depth = VideoTensor::zeros(t, h, w, 1);
    for (i, &m) in mask.data.iter().enumerate() {
        if m == 1.0 {
            depth.data[i] = depth_full.data[i];
            pixel.data[3 * i..3 * i + 3].copy_from_slice(&source.data[3 * i..3 * i + 3]);
        }
    }

    let base = if task.is_edit() {
        edit_instruction(task, &opts.edit_style)
    } else {
        prompt.to_string()
    };
    Ok(ConditionBundle {
        pixel,
        depth,
        mask,
        task,
        prompt: with_task_suffix(&base, task),
        motion_score: motion_proxy(clip),
        layout,
    })
}

/// Clip length for VEXT (`reserved = 0`) or for one end of FLC2V where
/// `reserved` frames are already taken by the other end. At least one frame
/// is always left for generation.
fn pick_clip_len(
    frames: usize,
    reserved: usize,
    opts: &BuildOptions,
    rng: &mut impl Rng,
) -> std::result::Result<usize, String> {
    let budget = frames.saturating_sub(1 + reserved);
    if let Some(k) = opts.fixed_clip_len {
        return if k >= 1 && k <= budget {
            Ok(k)
        } else {
            Err(format!("clip length {k} does not fit {frames} frames"))
        };
    }
    let hi = CLIP_LEN_MAX.min(budget);
    if hi < CLIP_LEN_MIN {
        return Err(format!(
            "needs at least {} frames, clip has {frames}",
            CLIP_LEN_MIN + reserved + 1
        ));
    }
    Ok(rng.random_range(CLIP_LEN_MIN..=hi))
}

/// Interior rectangle covering between 1/9 and 1/4 of the frame, at least
/// one pixel from every edge.
fn interior_rectangle(h: usize, w: usize, rng: &mut impl Rng) -> ConditionLayout {
    let area = h * w;
    // Feasible widths for a given rectangle height.
    let width_range = |rh: usize| -> Option<(usize, usize)> {
        let lo = area.div_ceil(9 * rh).max(1);
        let hi = (area / (4 * rh)).min(w.saturating_sub(2));
        (lo <= hi).then_some((lo, hi))
    };
    let heights: Vec<usize> = (1..=h.saturating_sub(2))
        .filter(|&rh| width_range(rh).is_some())
        .collect();
    // Multiples of 8 always admit (h/2, w/2), so `heights` is never empty.
    let rh = heights[rng.random_range(0..heights.len())];
    let (lo, hi) = width_range(rh).expect("feasible height");
    let rw = rng.random_range(lo..=hi);
    let top = rng.random_range(1..=h - 1 - rh);
    let left = rng.random_range(1..=w - 1 - rw);
    ConditionLayout::Interior {
        top,
        left,
        height: rh,
        width: rw,
    }
}

/// Band widths with each side spanning 1/8 to 1/4 of its dimension.
fn border_bands(h: usize, w: usize, rng: &mut impl Rng) -> ConditionLayout {
    let band = |dim: usize, rng: &mut dyn rand::RngCore| {
        let lo = dim.div_ceil(8);
        let hi = dim / 4;
        rng.random_range(lo..=hi)
    };
    let top = band(h, rng);
    let bottom = band(h, rng);
    let left = band(w, rng);
    let right = band(w, rng);
    ConditionLayout::Border {
        top,
        bottom,
        left,
        right,
    }
}

fn fill_mask(mask: &mut VideoTensor, layout: &ConditionLayout) {
    let (t, h, w, _) = mask.dims();
    match layout {
        ConditionLayout::Empty => {}
        ConditionLayout::Frames(ranges) => {
            for &(s, l) in ranges {
                for f in s..s + l {
                    mask.frame_mut(f).fill(1.0);
                }
            }
        }
        ConditionLayout::Interior {
            top,
            left,
            height,
            width,
        } => {
            mask.data.fill(1.0);
            for f in 0..t {
                for y in *top..top + height {
                    for x in *left..left + width {
                        mask.set(f, y, x, 0, 0.0);
                    }
                }
            }
        }
        ConditionLayout::Border {
            top,
            bottom,
            left,
            right,
        } => {
            for f in 0..t {
                for y in *top..h - bottom {
                    for x in *left..w - right {
                        mask.set(f, y, x, 0, 1.0);
                    }
                }
            }
        }
        ConditionLayout::Grayscale | ConditionLayout::Downsampled { .. } | ConditionLayout::Full => {
            mask.data.fill(1.0)
        }
    }
}

/// Area-average downsampling by `factor` followed by nearest upsampling back
/// to the original size. Edge blocks average only the pixels they contain.
pub fn area_down_nearest_up(clip: &VideoTensor, factor: usize) -> VideoTensor {
    let (t, h, w, c) = clip.dims();
    let mut out = VideoTensor::zeros(t, h, w, c);
    for f in 0..t {
        for by in (0..h).step_by(factor) {
            for bx in (0..w).step_by(factor) {
                let ys = by..(by + factor).min(h);
                let xs = bx..(bx + factor).min(w);
                let n = (ys.len() * xs.len()) as f64;
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            acc += clip.at(f, y, x, ch) as f64;
                        }
                    }
                    let mean = (acc / n) as f32;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            out.set(f, y, x, ch, mean);
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(frames: usize, h: usize, w: usize, seed: u64) -> VideoTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoTensor::from_fn(frames, h, w, 3, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn t2v_is_all_zero_with_suffix() {
        let c = clip(49, 16, 16, 1);
        let b = build_condition(&c, TaskTag::T2V, "a red ball", &mut rng(0)).unwrap();
        assert!(b.pixel.data.iter().all(|&v| v == 0.0));
        assert!(b.depth.data.iter().all(|&v| v == 0.0));
        assert!(b.mask.data.iter().all(|&v| v == 0.0));
        assert_eq!(b.prompt, "a red ball [task: text-to-video]");
    }

    #[test]
    fn i2v_masks_only_first_frame() {
        let c = clip(49, 16, 24, 2);
        let b = build_condition(&c, TaskTag::I2V, "p", &mut rng(0)).unwrap();
        let sums = b.mask_frame_sums();
        assert_eq!(sums[0], 16 * 24);
        assert!(sums[1..].iter().all(|&s| s == 0));
        assert_eq!(b.pixel.frame(0), c.frame(0));
    }

    #[test]
    fn vinp_fraction_seed_seven() {
        let c = clip(49, 16, 16, 3);
        let b = build_condition(&c, TaskTag::VINP, "p", &mut rng(7)).unwrap();
        let holes = b.mask.frame(0).iter().filter(|&&m| m == 0.0).count();
        let frac = holes as f64 / 256.0;
        assert!((1.0 / 9.0..=0.25).contains(&frac), "{frac}");
        b.check_consistency().unwrap();
    }

    #[test]
    fn flf2v_masks_first_and_last() {
        let c = clip(9, 8, 8, 4);
        let b = build_condition(&c, TaskTag::FLF2V, "p", &mut rng(0)).unwrap();
        let sums = b.mask_frame_sums();
        assert_eq!(sums[0], 64);
        assert_eq!(sums[8], 64);
        assert!(sums[1..8].iter().all(|&s| s == 0));
    }

    #[test]
    fn two_clip_lengths_leave_a_generated_frame() {
        for seed in 0..200 {
            for frames in [17, 21, 33, 49] {
                let c = VideoTensor::zeros(frames, 8, 8, 3);
                let b = build_condition(&c, TaskTag::FLC2V, "p", &mut rng(seed)).unwrap();
                let ConditionLayout::Frames(r) = &b.layout else { panic!() };
                let (k1, k2) = (r[0].1, r[1].1);
                assert!((CLIP_LEN_MIN..=CLIP_LEN_MAX).contains(&k1));
                assert!((CLIP_LEN_MIN..=CLIP_LEN_MAX).contains(&k2));
                assert!(k1 + k2 < frames);
                let b = build_condition(&c, TaskTag::VEXT, "p", &mut rng(seed)).unwrap();
                let ConditionLayout::Frames(r) = &b.layout else { panic!() };
                assert!((CLIP_LEN_MIN..=CLIP_LEN_MAX).contains(&r[0].1));
            }
        }
    }

    #[test]
    fn colorization_and_super_resolution_cover_everything() {
        let c = clip(5, 16, 16, 5);
        let b = build_condition(&c, TaskTag::VCOLOR, "p", &mut rng(1)).unwrap();
        assert!(b.mask.data.iter().all(|&m| m == 1.0));
        for px in b.pixel.data.chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
        let b = build_condition(&c, TaskTag::VSR, "p", &mut rng(1)).unwrap();
        let ConditionLayout::Downsampled { factor } = b.layout else { panic!() };
        assert!((2..=6).contains(&factor));
        assert_eq!(b.pixel, area_down_nearest_up(&c, factor));
    }

    #[test]
    fn edit_replaces_prompt() {
        let c = clip(1, 8, 8, 6);
        let b = build_condition(&c, TaskTag::IEDIT, "a cat", &mut rng(1)).unwrap();
        assert_eq!(b.prompt, "change the image to oil painting style [task: image-editing]");
        assert_eq!(b.pixel, c);
    }

    #[test]
    fn errors() {
        let video = clip(5, 8, 8, 7);
        let image = clip(1, 8, 8, 7);
        assert!(matches!(
            build_condition(&video, TaskTag::T2I, "p", &mut rng(0)),
            Err(MfmError::TaskMismatch { .. })
        ));
        assert!(matches!(
            build_condition(&image, TaskTag::T2V, "p", &mut rng(0)),
            Err(MfmError::TaskMismatch { .. })
        ));
        assert!(matches!(
            build_condition(&video, TaskTag::T2V, "  ", &mut rng(0)),
            Err(MfmError::EmptyPrompt(_))
        ));
        assert!(build_condition(&video, TaskTag::VEXT, "p", &mut rng(0)).is_err());
    }

    #[test]
    fn depth_examples() {
        let constant = VideoTensor::from_fn(2, 8, 8, 3, |_, _, _, c| [0.2, -0.4, 0.6][c]);
        let d = depth_proxy(&constant).unwrap();
        assert!(d.data.iter().all(|&v| (v - d.data[0]).abs() < 1e-6));

        let black = VideoTensor::filled(1, 8, 8, 3, -1.0);
        assert!(depth_proxy(&black).unwrap().data.iter().all(|&v| (v - 1.0).abs() < 1e-6));

        // 2x2 checkerboard of white and black at radius 0: depth = 1 - luminance.
        let board = VideoTensor::from_fn(1, 2, 2, 3, |_, y, x, _| if (y + x) % 2 == 0 { 1.0 } else { -1.0 });
        let d = depth_proxy_with_radius(&board, 0).unwrap();
        assert_eq!(d.data, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn motion_examples() {
        let still = VideoTensor::from_fn(4, 8, 8, 3, |_, y, x, c| (y * 8 + x + c) as f32 / 100.0);
        assert_eq!(motion_proxy(&still), 0.0);
        assert_eq!(motion_proxy(&still.frame_tensor(0)), 0.0);
        let shifted = VideoTensor::from_fn(2, 8, 8, 3, |f, y, x, c| {
            (y * 8 + x + c) as f32 / 200.0 + 0.1 * f as f32
        });
        assert!((motion_proxy(&shifted) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn qualification_rules() {
        let image = VideoTensor::zeros(1, 8, 8, 3);
        let q = qualified_tasks(&image, false);
        assert_eq!(
            q.into_iter().collect::<Vec<_>>(),
            vec![TaskTag::T2I, TaskTag::IINP, TaskTag::IOUTP, TaskTag::ICOLOR, TaskTag::SISR]
        );
        let long = VideoTensor::zeros(49, 8, 8, 3);
        assert_eq!(qualified_tasks(&long, true).len(), 10);
        let short = VideoTensor::zeros(12, 8, 8, 3);
        let q = qualified_tasks(&short, false);
        assert_eq!(q.len(), 7);
        for t in [TaskTag::VEXT, TaskTag::FLC2V, TaskTag::VEDIT] {
            assert!(!q.contains(&t));
        }
    }

    #[test]
    fn suffix_round_trip_and_layout_text() {
        for t in TaskTag::ALL {
            let p = with_task_suffix("hello [world]", t);
            assert_eq!(parse_task_suffix(&p), Some(("hello [world]", t)));
        }
        for l in [
            ConditionLayout::Empty,
            ConditionLayout::Frames(vec![(0, 8), (89, 8)]),
            ConditionLayout::Interior { top: 1, left: 2, height: 3, width: 4 },
            ConditionLayout::Border { top: 1, bottom: 2, left: 3, right: 4 },
            ConditionLayout::Grayscale,
            ConditionLayout::Downsampled { factor: 5 },
            ConditionLayout::Full,
        ] {
            assert_eq!(l.to_string().parse::<ConditionLayout>().unwrap(), l);
        }
    }
}
