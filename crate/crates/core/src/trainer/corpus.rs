//! Procedural clips with captions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{MfmError, Result};
use crate::latents::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Archetype {
    Static,
    Translating,
    Oscillating,
    MovingGradient,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::Static,
        Archetype::Translating,
        Archetype::Oscillating,
        Archetype::MovingGradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Static => "static",
            Archetype::Translating => "translating",
            Archetype::Oscillating => "oscillating",
            Archetype::MovingGradient => "gradient",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = MfmError;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| MfmError::Config(format!("unknown archetype {s:?}")))
    }
}

const COLORS: [(&str, [f64; 3]); 6] = [
    ("red", [0.9, -0.5, -0.5]),
    ("green", [-0.5, 0.8, -0.4]),
    ("blue", [-0.5, -0.3, 0.9]),
    ("yellow", [0.9, 0.8, -0.6]),
    ("cyan", [-0.6, 0.8, 0.8]),
    ("magenta", [0.8, -0.6, 0.8]),
];

const BACKGROUNDS: [(&str, [f64; 3]); 3] = [
    ("dark", [-0.7, -0.7, -0.6]),
    ("grey", [-0.1, -0.1, -0.1]),
    ("pale", [0.5, 0.5, 0.45]),
];

const DIRECTIONS: [(&str, (f64, f64)); 4] = [
    ("left", (-1.0, 0.0)),
    ("right", (1.0, 0.0)),
    ("up", (0.0, -1.0)),
    ("down", (0.0, 1.0)),
];

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub images: usize,
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub archetypes: Vec<Archetype>,
    /// Also emit a stylised copy of every clip as an editing target.
    pub edit_pairs: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            images: 4,
            videos: 4,
            frames: 5,
            height: 32,
            width: 32,
            archetypes: Archetype::ALL.to_vec(),
            edit_pairs: true,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.images + self.videos == 0 {
            return Err(MfmError::Config("corpus spec asks for no samples".into()));
        }
        if self.videos > 0 && (self.frames < 3 || self.archetypes.is_empty()) {
            return Err(MfmError::Config("videos need at least 3 frames and one archetype".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(MfmError::Config("clips must be at least 8×8".into()));
        }
        Ok(())
    }

    /// `key = value` lines; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| MfmError::Parse { line: i + 1, message: m };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let count = || v.parse::<usize>().map_err(|_| err(format!("{k}: expected a count, got {v:?}")));
            match k {
                "images" => spec.images = count()?,
                "videos" => spec.videos = count()?,
                "frames" => spec.frames = count()?,
                "height" => spec.height = count()?,
                "width" => spec.width = count()?,
                "archetypes" => {
                    spec.archetypes = v
                        .split(',')
                        .map(|a| a.parse().map_err(|e: MfmError| err(e.to_string())))
                        .collect::<Result<_>>()?
                }
                "edit_pairs" => {
                    spec.edit_pairs = v.parse().map_err(|_| err(format!("edit_pairs: expected true/false, got {v:?}")))?
                }
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for CorpusSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.archetypes.iter().map(|a| a.name()).collect();
        writeln!(f, "images = {}", self.images)?;
        writeln!(f, "videos = {}", self.videos)?;
        writeln!(f, "frames = {}", self.frames)?;
        writeln!(f, "height = {}", self.height)?;
        writeln!(f, "width = {}", self.width)?;
        writeln!(f, "archetypes = {}", names.join(","))?;
        writeln!(f, "edit_pairs = {}", self.edit_pairs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub clip: VideoTensor,
    pub caption: String,
    pub archetype: Archetype,
    /// Editing target for the `oil painting` instruction.
    pub edited: Option<VideoTensor>,
}

struct Scene {
    archetype: Archetype,
    fg: [f64; 3],
    bg: [f64; 3],
    dir: (f64, f64),
    center: (f64, f64),
    radius: f64,
    speed: f64,
}

impl Scene {
    fn render(&self, frames: usize, h: usize, w: usize) -> VideoTensor {
        let soft = (h.min(w) as f64 / 10.0).max(1.0);
        VideoTensor::from_fn(frames, h, w, 3, |t, y, x, c| {
            let t = t as f64;
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let v = match self.archetype {
                Archetype::Static | Archetype::Translating | Archetype::Oscillating => {
                    let shift = if self.archetype == Archetype::Translating { self.speed * t } else { 0.0 };
                    let cx = self.center.0 + self.dir.0 * shift;
                    let cy = self.center.1 + self.dir.1 * shift;
                    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                    let alpha = 0.5 * (1.0 - ((d - self.radius) / soft).tanh());
                    let gain = if self.archetype == Archetype::Oscillating {
                        0.55 + 0.45 * (2.0 * PI * t / 4.0).cos()
                    } else {
                        1.0
                    };
                    self.bg[c] + (self.fg[c] * gain - self.bg[c]) * alpha
                }
                Archetype::MovingGradient => {
                    let period = 2.0 * h.max(w) as f64;
                    let s = (px * self.dir.0 + py * self.dir.1 - self.speed * t) / period;
                    let a = 0.5 * (1.0 + (2.0 * PI * s).sin());
                    self.bg[c] + (self.fg[c] - self.bg[c]) * a
                }
            };
            v.clamp(-1.0, 1.0) as f32
        })
    }
}

/// Stand-in for an `oil painting` restyle: warm tint and softened contrast.
pub fn apply_style(clip: &VideoTensor) -> VideoTensor {
    let mut out = clip.clone();
    for px in out.data.chunks_exact_mut(clip.channels) {
        let l = px.iter().sum::<f32>() / px.len() as f32;
        for (c, v) in px.iter_mut().enumerate() {
            let tint = [0.25, 0.05, -0.25].get(c).copied().unwrap_or(0.0);
            *v = (0.5 * *v + 0.3 * l + tint).clamp(-1.0, 1.0);
        }
    }
    out
}

/// Nearest resampling in time and space to `(T, H, W)`.
pub fn fit_clip(clip: &VideoTensor, resolution: (usize, usize, usize)) -> VideoTensor {
    let (t, h, w) = resolution;
    if (clip.frames, clip.height, clip.width) == (t, h, w) {
        return clip.clone();
    }
    VideoTensor::from_fn(t, h, w, clip.channels, |f, y, x, c| {
        clip.at(f * clip.frames / t, y * clip.height / h, x * clip.width / w, c)
    })
}

/// Deterministic corpus; every caption is distinct within one corpus.
pub fn make_synthetic_corpus(spec: &CorpusSpec, rng: &mut impl Rng) -> Result<Vec<CorpusItem>> {
    spec.validate()?;
    let (h, w) = (spec.height as f64, spec.width as f64);
    let mut items = Vec::with_capacity(spec.images + spec.videos);

    let mut combos: Vec<(usize, usize, usize, usize)> = Vec::new();
    for a in 0..spec.archetypes.len().max(1) {
        for c in 0..COLORS.len() {
            for b in 0..BACKGROUNDS.len() {
                for d in 0..DIRECTIONS.len() {
                    combos.push((a, c, b, d));
                }
            }
        }
    }
    combos.shuffle(rng);
    let mut next = combos.into_iter().cycle().enumerate();

    for k in 0..spec.images + spec.videos {
        let (round, (a, c, b, d)) = next.next().expect("cycle");
        let is_video = k >= spec.images;
        let archetype = if is_video { spec.archetypes[a] } else { Archetype::Static };
        let scene = Scene {
            archetype,
            fg: COLORS[c].1,
            bg: BACKGROUNDS[b].1,
            dir: DIRECTIONS[d].1,
            center: (w * rng.random_range(0.35..0.65), h * rng.random_range(0.35..0.65)),
            radius: h.min(w) * rng.random_range(0.22..0.32),
            speed: h.min(w) / 32.0 * rng.random_range(0.8..1.2),
        };
        let (color, bg, dir) = (COLORS[c].0, BACKGROUNDS[b].0, DIRECTIONS[d].0);
        let mut caption = match (is_video, archetype) {
            (false, _) => format!("an image of a {color} disc on a {bg} background facing {dir}"),
            (true, Archetype::Static) => format!("a still {color} disc on a {bg} background facing {dir}"),
            (true, Archetype::Translating) => format!("a {color} disc moving {dir} on a {bg} background"),
            (true, Archetype::Oscillating) => format!("a {color} disc pulsing on a {bg} background facing {dir}"),
            (true, Archetype::MovingGradient) => format!("a {color} gradient sliding {dir} over a {bg} background"),
        };
        let repeats = round / (spec.archetypes.len().max(1) * COLORS.len() * BACKGROUNDS.len() * DIRECTIONS.len());
        if repeats > 0 {
            caption.push_str(&format!(" take {}", repeats + 1));
        }
        let frames = if is_video { spec.frames } else { 1 };
        let clip = scene.render(frames, spec.height, spec.width);
        let edited = spec.edit_pairs.then(|| apply_style(&clip));
        items.push(CorpusItem {
            clip,
            caption,
            archetype,
            edited,
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::motion_proxy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn images_only_and_static_motion() {
        let spec = CorpusSpec {
            images: 5,
            videos: 0,
            ..CorpusSpec::default()
        };
        let c = make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(c.iter().all(|i| i.clip.frames == 1));
        let spec = CorpusSpec {
            images: 0,
            videos: 3,
            archetypes: vec![Archetype::Static],
            ..CorpusSpec::default()
        };
        let c = make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(c.iter().all(|i| motion_proxy(&i.clip) == 0.0 && i.clip.frames == 5));
    }

    #[test]
    fn moving_archetypes_move() {
        let spec = CorpusSpec {
            images: 0,
            videos: 6,
            archetypes: vec![Archetype::Translating, Archetype::Oscillating, Archetype::MovingGradient],
            ..CorpusSpec::default()
        };
        for item in make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap() {
            assert!(motion_proxy(&item.clip) > 0.0, "{}", item.caption);
        }
    }

    #[test]
    fn deterministic_with_distinct_captions() {
        let spec = CorpusSpec::default();
        let a = make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = make_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let mut caps: Vec<_> = a.iter().map(|i| i.caption.clone()).collect();
        caps.sort();
        caps.dedup();
        assert_eq!(caps.len(), a.len());
        assert!(a.iter().all(|i| i.clip.data.iter().all(|v| (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = CorpusSpec {
            images: 2,
            archetypes: vec![Archetype::Translating],
            ..CorpusSpec::default()
        };
        assert_eq!(CorpusSpec::parse(&spec.to_string()).unwrap(), spec);
        match CorpusSpec::parse("images = 1\nshapes = 2\n") {
            Err(MfmError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(CorpusSpec::parse("images = 0\nvideos = 0\n").is_err());
    }

    #[test]
    fn fit_clip_nearest() {
        let clip = VideoTensor::from_fn(9, 16, 16, 3, |t, y, x, c| (t * 1000 + y * 10 + x + c) as f32);
        let f = fit_clip(&clip, (5, 8, 8));
        assert_eq!(f.dims(), (5, 8, 8, 3));
        assert_eq!(f.at(1, 1, 1, 0), clip.at(1, 2, 2, 0));
        assert_eq!(fit_clip(&clip, (9, 16, 16)), clip);
    }
}
