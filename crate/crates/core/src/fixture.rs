//! On-disk condition bundles.
//!
//! A short text header followed by the pixel, depth and mask tensors in the
//! binary container format:
//!
//! ```text
//! MFMBUNDLE 1
//! task I2V
//! prompt a red disc moving left [task: image-to-video]
//! motion_score 0.0123
//! layout frames 0+1
//!
//! <pixel tensor><depth tensor><mask tensor>
//! ```
//!
//! The prompt escapes `\`, newline and carriage return; the motion score is
//! written in shortest round-trip form, so a write/read cycle is bit-exact.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::conditioning::ConditionBundle;
use crate::container::{read_tensor, write_tensor, RawTensor, MAGIC};
use crate::error::{MfmError, Result};

pub const BUNDLE_MAGIC: &str = "MFMBUNDLE 1";

/// Kind of a fixture file, judged from its first bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    Tensor,
    Bundle,
    Checkpoint,
}

pub fn detect(bytes: &[u8]) -> Option<FixtureKind> {
    if bytes.starts_with(BUNDLE_MAGIC.as_bytes()) {
        Some(FixtureKind::Bundle)
    } else if bytes.len() >= 4 && u32::from_le_bytes(bytes[..4].try_into().unwrap()) == MAGIC {
        Some(FixtureKind::Tensor)
    } else if bytes.starts_with(b"MFMC") {
        Some(FixtureKind::Checkpoint)
    } else {
        None
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            other => return Err(MfmError::Format(format!("bad escape \\{other:?}"))),
        }
    }
    Ok(out)
}

pub fn write_bundle(out: &mut impl Write, b: &ConditionBundle) -> Result<()> {
    b.check_consistency()?;
    writeln!(out, "{BUNDLE_MAGIC}")?;
    writeln!(out, "task {}", b.task)?;
    writeln!(out, "prompt {}", escape(&b.prompt))?;
    writeln!(out, "motion_score {:?}", b.motion_score)?;
    writeln!(out, "layout {}", b.layout)?;
    writeln!(out)?;
    for v in [&b.pixel, &b.depth, &b.mask] {
        write_tensor(out, &RawTensor::from(v))?;
    }
    Ok(())
}

pub fn bundle_to_bytes(b: &ConditionBundle) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_bundle(&mut out, b)?;
    Ok(out)
}

fn header_line(input: &mut impl BufRead, key: &str, lineno: usize) -> Result<String> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let line = line.strip_suffix('\n').unwrap_or(&line);
    if key.is_empty() {
        return Ok(line.to_string());
    }
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| MfmError::Parse {
            line: lineno,
            message: format!("expected `{key} ...`, got {line:?}"),
        })
}

pub fn read_bundle(input: impl Read) -> Result<ConditionBundle> {
    let mut input = BufReader::new(input);
    let magic = header_line(&mut input, "", 1)?;
    if magic != BUNDLE_MAGIC {
        return Err(MfmError::Format(format!("not a bundle fixture: {magic:?}")));
    }
    let task = header_line(&mut input, "task", 2)?.parse()?;
    let prompt = unescape(&header_line(&mut input, "prompt", 3)?)?;
    let motion_score = header_line(&mut input, "motion_score", 4)?
        .parse()
        .map_err(|_| MfmError::Parse { line: 4, message: "bad motion score".into() })?;
    let layout = header_line(&mut input, "layout", 5)?.parse()?;
    if !header_line(&mut input, "", 6)?.is_empty() {
        return Err(MfmError::Parse { line: 6, message: "expected a blank line".into() });
    }
    let pixel = read_tensor(&mut input)?.into_video()?;
    let depth = read_tensor(&mut input)?.into_video()?;
    let mask = read_tensor(&mut input)?.into_video()?;
    let b = ConditionBundle {
        pixel,
        depth,
        mask,
        task,
        prompt,
        motion_score,
        layout,
    };
    b.check_consistency()?;
    Ok(b)
}

pub fn save_bundle(path: impl AsRef<Path>, b: &ConditionBundle) -> Result<()> {
    std::fs::write(path, bundle_to_bytes(b)?)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ConditionBundle> {
    read_bundle(std::fs::File::open(path)?)
}
