//! Unified multi-task video generation and manipulation at desk scale.

pub mod adapter;
pub mod backbone;
pub mod bench;
pub mod cli;
pub mod conditioning;
pub mod container;
pub mod error;
pub mod fixture;
pub mod flow;
pub mod latents;
pub mod params;
pub mod tape;
pub mod task;
pub mod trainer;

pub use error::{MfmError, Result};
