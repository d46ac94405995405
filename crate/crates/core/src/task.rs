//! The sixteen generation and manipulation tasks.

use std::fmt;
use std::str::FromStr;

use crate::error::MfmError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskTag {
    T2V,
    I2V,
    VEXT,
    VINP,
    VOUTP,
    VCOLOR,
    FLF2V,
    FLC2V,
    VSR,
    VEDIT,
    T2I,
    IINP,
    IOUTP,
    ICOLOR,
    SISR,
    IEDIT,
}

impl TaskTag {
    pub const ALL: [TaskTag; 16] = [
        TaskTag::T2V,
        TaskTag::I2V,
        TaskTag::VEXT,
        TaskTag::VINP,
        TaskTag::VOUTP,
        TaskTag::VCOLOR,
        TaskTag::FLF2V,
        TaskTag::FLC2V,
        TaskTag::VSR,
        TaskTag::VEDIT,
        TaskTag::T2I,
        TaskTag::IINP,
        TaskTag::IOUTP,
        TaskTag::ICOLOR,
        TaskTag::SISR,
        TaskTag::IEDIT,
    ];

    pub const VIDEO: [TaskTag; 10] = [
        TaskTag::T2V,
        TaskTag::I2V,
        TaskTag::VEXT,
        TaskTag::VINP,
        TaskTag::VOUTP,
        TaskTag::VCOLOR,
        TaskTag::FLF2V,
        TaskTag::FLC2V,
        TaskTag::VSR,
        TaskTag::VEDIT,
    ];

    pub const IMAGE: [TaskTag; 6] = [
        TaskTag::T2I,
        TaskTag::IINP,
        TaskTag::IOUTP,
        TaskTag::ICOLOR,
        TaskTag::SISR,
        TaskTag::IEDIT,
    ];

    /// Short upper-case label, e.g. `"FLF2V"`.
    pub fn short_name(self) -> &'static str {
        match self {
            TaskTag::T2V => "T2V",
            TaskTag::I2V => "I2V",
            TaskTag::VEXT => "VEXT",
            TaskTag::VINP => "VINP",
            TaskTag::VOUTP => "VOUTP",
            TaskTag::VCOLOR => "VCOLOR",
            TaskTag::FLF2V => "FLF2V",
            TaskTag::FLC2V => "FLC2V",
            TaskTag::VSR => "VSR",
            TaskTag::VEDIT => "VEDIT",
            TaskTag::T2I => "T2I",
            TaskTag::IINP => "IINP",
            TaskTag::IOUTP => "IOUTP",
            TaskTag::ICOLOR => "ICOLOR",
            TaskTag::SISR => "SISR",
            TaskTag::IEDIT => "IEDIT",
        }
    }

    /// Lower-case hyphenated name appended to prompts.
    pub fn canonical(self) -> &'static str {
        match self {
            TaskTag::T2V => "text-to-video",
            TaskTag::I2V => "image-to-video",
            TaskTag::VEXT => "video-extension",
            TaskTag::VINP => "video-inpainting",
            TaskTag::VOUTP => "video-outpainting",
            TaskTag::VCOLOR => "video-colorization",
            TaskTag::FLF2V => "first-last-frame-to-video",
            TaskTag::FLC2V => "first-last-clip-to-video",
            TaskTag::VSR => "video-super-resolution",
            TaskTag::VEDIT => "video-editing",
            TaskTag::T2I => "text-to-image",
            TaskTag::IINP => "image-inpainting",
            TaskTag::IOUTP => "image-outpainting",
            TaskTag::ICOLOR => "image-colorization",
            TaskTag::SISR => "single-image-super-resolution",
            TaskTag::IEDIT => "image-editing",
        }
    }

    pub fn is_image(self) -> bool {
        TaskTag::IMAGE.contains(&self)
    }

    /// Generation tasks leave at least one frame without frame-wise conditions.
    pub fn is_generation(self) -> bool {
        matches!(
            self,
            TaskTag::T2V
                | TaskTag::I2V
                | TaskTag::VEXT
                | TaskTag::FLF2V
                | TaskTag::FLC2V
                | TaskTag::T2I
        )
    }

    /// Pure text-driven tasks.
    pub fn is_text_only(self) -> bool {
        matches!(self, TaskTag::T2V | TaskTag::T2I)
    }

    pub fn is_edit(self) -> bool {
        matches!(self, TaskTag::VEDIT | TaskTag::IEDIT)
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for TaskTag {
    type Err = MfmError;

    /// Accepts either the short label (case-insensitive) or the canonical name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        TaskTag::ALL
            .into_iter()
            .find(|t| t.short_name().eq_ignore_ascii_case(s) || t.canonical() == s)
            .ok_or_else(|| MfmError::Config(format!("unknown task {s:?}")))
    }
}
