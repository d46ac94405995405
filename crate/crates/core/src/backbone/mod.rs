//! Diffusion transformer: token embedding, 3D full self-attention with 3D
//! RoPE and QK-Norm, text cross-attention, AdaLN modulation, FFN.

mod config;
mod model;
mod rope;
mod text;

pub use config::ModelConfig;
pub use model::{qk_norm, sinusoidal_embedding, ForwardTrace, MfmModel, ScalarConditions, Transformer};
pub use rope::{rope3d, rope_split, rotary_table, token_positions, ROPE_BASE};
pub use text::{embed_text, token_vector, TextEmbedding, MAX_TEXT_LEN};
