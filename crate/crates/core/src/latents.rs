//! Pixel-space clips, latent grids, and the fixed linear codec between them.
//!
//! The codec folds every 8×8 spatial patch into channels and averages frames
//! in temporal groups of four. For clips with `T ≡ 1 (mod 4)` the first frame
//! forms its own group, so 49 frames map to 13 latent frames. An optional
//! orthonormal projection shrinks the folded channels for small models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MfmError, Result};

/// Spatial compression factor of the codec.
pub const SPATIAL_FACTOR: usize = 8;
/// Temporal compression factor of the codec.
pub const TEMPORAL_FACTOR: usize = 4;

/// Channels-last clip `T×H×W×C`. `T = 1` is an image.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(MfmError::shape(
                format!("{frames}x{height}x{width}x{channels} ({expected} values)"),
                format!("{} values", data.len()),
            ));
        }
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(MfmError::Dimension("empty clip".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(MfmError::NonFinite {
                context: format!("clip element {i}"),
            });
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self::filled(frames, height, width, channels, 0.0)
    }

    pub fn filled(frames: usize, height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
            data: vec![value; frames * height * width * channels],
        }
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(frames * height * width * channels);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(t, y, x, c));
                    }
                }
            }
        }
        Self {
            frames,
            height,
            width,
            channels,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }

    pub fn same_grid(&self, other: &VideoTensor) -> bool {
        self.frames == other.frames && self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(t, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(t, y, x, c);
        self.data[i] = v;
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Single frame `t` as a `1×H×W×C` tensor.
    pub fn frame_tensor(&self, t: usize) -> VideoTensor {
        VideoTensor {
            frames: 1,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.frame(t).to_vec(),
        }
    }

    /// First `n` frames.
    pub fn truncate_frames(&self, n: usize) -> VideoTensor {
        let n = n.min(self.frames);
        VideoTensor {
            frames: n,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[..n * self.frame_len()].to_vec(),
        }
    }

    /// Checks the codec's shape contract: `H`, `W` multiples of 8 and `T` in
    /// one of the two accepted residue classes.
    pub fn check_codec_shape(&self) -> Result<()> {
        latent_dims(self.frames, self.height, self.width).map(|_| ())
    }
}

/// Latent-space tensor `t×h×w×c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            t,
            h,
            w,
            c,
            data: vec![0.0; t * h * w * c],
        }
    }

    pub fn from_vec(t: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != t * h * w * c {
            return Err(MfmError::shape(
                format!("{t}x{h}x{w}x{c}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { t, h, w, c, data })
    }

    /// Element-wise standard normal draws.
    pub fn randn(t: usize, h: usize, w: usize, c: usize, rng: &mut impl rand::Rng) -> Self {
        let data = (0..t * h * w * c)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        Self { t, h, w, c, data }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.t, self.h, self.w, self.c)
    }

    pub fn tokens(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(MfmError::shape(
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> LatentGrid {
        LatentGrid {
            t: self.t,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &LatentGrid, f: impl Fn(f64, f64) -> f64) -> Result<LatentGrid> {
        self.ensure_same_shape(other)?;
        Ok(LatentGrid {
            t: self.t,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Number of latent frames for a `T`-frame clip.
pub fn latent_frames(frames: usize) -> Result<usize> {
    match frames {
        0 => Err(MfmError::Dimension("clip has no frames".into())),
        1 => Ok(1),
        t if t % TEMPORAL_FACTOR == 1 => Ok((t - 1) / TEMPORAL_FACTOR + 1),
        t if t % TEMPORAL_FACTOR == 0 => Ok(t / TEMPORAL_FACTOR),
        t => Err(MfmError::Dimension(format!(
            "frame count {t} is neither 0 nor 1 mod {TEMPORAL_FACTOR}"
        ))),
    }
}

/// Latent `(t, h, w)` for a `T×H×W` clip.
pub fn latent_dims(frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize)> {
    if height == 0 || width == 0 || height % SPATIAL_FACTOR != 0 || width % SPATIAL_FACTOR != 0 {
        return Err(MfmError::Dimension(format!(
            "height {height} and width {width} must be positive multiples of {SPATIAL_FACTOR}"
        )));
    }
    Ok((
        latent_frames(frames)?,
        height / SPATIAL_FACTOR,
        width / SPATIAL_FACTOR,
    ))
}

/// Pixel frames that average into each latent frame.
pub fn temporal_groups(frames: usize) -> Result<Vec<std::ops::Range<usize>>> {
    let t = latent_frames(frames)?;
    if frames == 1 {
        return Ok(vec![0..1]);
    }
    if frames % TEMPORAL_FACTOR == 1 {
        let mut groups = vec![0..1];
        groups.extend((1..t).map(|g| {
            let start = 1 + (g - 1) * TEMPORAL_FACTOR;
            start..start + TEMPORAL_FACTOR
        }));
        Ok(groups)
    } else {
        Ok((0..t)
            .map(|g| g * TEMPORAL_FACTOR..(g + 1) * TEMPORAL_FACTOR)
            .collect())
    }
}

/// Basis used to shrink the folded patch channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    /// Lowest 2-D DCT frequencies of each 8×8 patch, zig-zag order, colour-minor.
    LowFrequency,
    /// Gram-Schmidt-orthonormalised Gaussian rows from a fixed seed.
    Seeded(u64),
}

#[derive(Clone, Debug)]
struct Projection {
    rows: usize,
    cols: usize,
    // row-major rows × cols, orthonormal rows
    matrix: Vec<f64>,
}

impl Projection {
    fn build(kind: ProjectionKind, rows: usize, pixel_channels: usize) -> Result<Self> {
        let patch = SPATIAL_FACTOR * SPATIAL_FACTOR;
        let cols = patch * pixel_channels;
        if rows == 0 || rows > cols {
            return Err(MfmError::Config(format!(
                "projected channel count {rows} must lie in 1..={cols}"
            )));
        }
        let matrix = match kind {
            ProjectionKind::LowFrequency => {
                let mut freqs: Vec<(usize, usize)> = (0..SPATIAL_FACTOR)
                    .flat_map(|u| (0..SPATIAL_FACTOR).map(move |v| (u, v)))
                    .collect();
                freqs.sort_by_key(|&(u, v)| (u + v, u));
                let n = SPATIAL_FACTOR as f64;
                let alpha = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                let mut m = vec![0.0; rows * cols];
                for r in 0..rows {
                    let (u, v) = freqs[r / pixel_channels];
                    let ch = r % pixel_channels;
                    for dy in 0..SPATIAL_FACTOR {
                        for dx in 0..SPATIAL_FACTOR {
                            let cy = ((2 * dy + 1) as f64 * u as f64 * std::f64::consts::PI
                                / (2.0 * n))
                                .cos();
                            let cx = ((2 * dx + 1) as f64 * v as f64 * std::f64::consts::PI
                                / (2.0 * n))
                                .cos();
                            let col = (dy * SPATIAL_FACTOR + dx) * pixel_channels + ch;
                            m[r * cols + col] = alpha(u) * alpha(v) * cy * cx;
                        }
                    }
                }
                m
            }
            ProjectionKind::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut m: Vec<f64> = (0..rows * cols)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                for r in 0..rows {
                    for prev in 0..r {
                        let dot: f64 = (0..cols)
                            .map(|c| m[r * cols + c] * m[prev * cols + c])
                            .sum();
                        for c in 0..cols {
                            m[r * cols + c] -= dot * m[prev * cols + c];
                        }
                    }
                    let norm = (0..cols)
                        .map(|c| m[r * cols + c].powi(2))
                        .sum::<f64>()
                        .sqrt();
                    for c in 0..cols {
                        m[r * cols + c] /= norm;
                    }
                }
                m
            }
        };
        Ok(Self { rows, cols, matrix })
    }
}

/// Fixed, non-learned linear codec with 8×8 spatial and 4× temporal compression.
#[derive(Clone, Debug)]
pub struct LatentCodec {
    pixel_channels: usize,
    projection: Option<Projection>,
}

impl Default for LatentCodec {
    fn default() -> Self {
        Self::new(3)
    }
}

impl LatentCodec {
    /// Lossless spatial folding: `c = 64·C`.
    pub fn new(pixel_channels: usize) -> Self {
        Self {
            pixel_channels,
            projection: None,
        }
    }

    /// Folding followed by an orthonormal projection to `channels` latent channels.
    ///
    /// Projected coefficients are divided by 8 so that the DC term of a patch
    /// equals the patch mean.
    pub fn projected(pixel_channels: usize, channels: usize, kind: ProjectionKind) -> Result<Self> {
        Ok(Self {
            pixel_channels,
            projection: Some(Projection::build(kind, channels, pixel_channels)?),
        })
    }

    pub fn pixel_channels(&self) -> usize {
        self.pixel_channels
    }

    pub fn folded_channels(&self) -> usize {
        SPATIAL_FACTOR * SPATIAL_FACTOR * self.pixel_channels
    }

    pub fn latent_channels(&self) -> usize {
        self.projection
            .as_ref()
            .map_or(self.folded_channels(), |p| p.rows)
    }

    /// Latent `(t, h, w, c)` for a `T×H×W` clip.
    pub fn latent_shape(&self, frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        let (t, h, w) = latent_dims(frames, height, width)?;
        Ok((t, h, w, self.latent_channels()))
    }

    pub fn encode(&self, video: &VideoTensor) -> Result<LatentGrid> {
        if video.channels != self.pixel_channels {
            return Err(MfmError::shape(
                format!("{} channels", self.pixel_channels),
                format!("{} channels", video.channels),
            ));
        }
        let (t, h, w) = latent_dims(video.frames, video.height, video.width)?;
        let groups = temporal_groups(video.frames)?;
        let folded_c = self.folded_channels();
        let mut folded = vec![0.0f64; t * h * w * folded_c];
        let pc = self.pixel_channels;
        for (g, range) in groups.iter().enumerate() {
            let inv = 1.0 / range.len() as f64;
            for i in 0..h {
                for j in 0..w {
                    let base = ((g * h + i) * w + j) * folded_c;
                    for dy in 0..SPATIAL_FACTOR {
                        for dx in 0..SPATIAL_FACTOR {
                            for ch in 0..pc {
                                let mut acc = 0.0f64;
                                for f in range.clone() {
                                    acc += video.at(
                                        f,
                                        i * SPATIAL_FACTOR + dy,
                                        j * SPATIAL_FACTOR + dx,
                                        ch,
                                    ) as f64;
                                }
                                folded[base + (dy * SPATIAL_FACTOR + dx) * pc + ch] = acc * inv;
                            }
                        }
                    }
                }
            }
        }
        let Some(p) = &self.projection else {
            return LatentGrid::from_vec(t, h, w, folded_c, folded);
        };
        let cells = t * h * w;
        let mut out = vec![0.0; cells * p.rows];
        for cell in 0..cells {
            let src = &folded[cell * p.cols..(cell + 1) * p.cols];
            for r in 0..p.rows {
                let row = &p.matrix[r * p.cols..(r + 1) * p.cols];
                let dot: f64 = row.iter().zip(src).map(|(a, b)| a * b).sum();
                out[cell * p.rows + r] = dot / SPATIAL_FACTOR as f64;
            }
        }
        LatentGrid::from_vec(t, h, w, p.rows, out)
    }

    /// Inverse folding; every frame of a temporal group receives the group value.
    pub fn decode(&self, latent: &LatentGrid, frames: usize) -> Result<VideoTensor> {
        let (t, h, w) = latent_dims(frames, latent.h * SPATIAL_FACTOR, latent.w * SPATIAL_FACTOR)?;
        if t != latent.t || latent.c != self.latent_channels() {
            return Err(MfmError::shape(
                format!("{t}x{h}x{w}x{} latent for {frames} frames", self.latent_channels()),
                format!("{:?}", latent.dims()),
            ));
        }
        let folded_c = self.folded_channels();
        let folded: Vec<f64> = match &self.projection {
            None => latent.data.clone(),
            Some(p) => {
                let cells = t * h * w;
                let mut f = vec![0.0; cells * p.cols];
                for cell in 0..cells {
                    let src = &latent.data[cell * p.rows..(cell + 1) * p.rows];
                    let dst = &mut f[cell * p.cols..(cell + 1) * p.cols];
                    for (r, &coef) in src.iter().enumerate() {
                        let row = &p.matrix[r * p.cols..(r + 1) * p.cols];
                        for (d, m) in dst.iter_mut().zip(row) {
                            *d += m * coef * SPATIAL_FACTOR as f64;
                        }
                    }
                }
                f
            }
        };
        let pc = self.pixel_channels;
        let mut video = VideoTensor::zeros(frames, h * SPATIAL_FACTOR, w * SPATIAL_FACTOR, pc);
        for (g, range) in temporal_groups(frames)?.into_iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    let base = ((g * h + i) * w + j) * folded_c;
                    for dy in 0..SPATIAL_FACTOR {
                        for dx in 0..SPATIAL_FACTOR {
                            for ch in 0..pc {
                                let v = folded[base + (dy * SPATIAL_FACTOR + dx) * pc + ch] as f32;
                                for f in range.clone() {
                                    video.set(
                                        f,
                                        i * SPATIAL_FACTOR + dy,
                                        j * SPATIAL_FACTOR + dx,
                                        ch,
                                        v,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(video)
    }
}
