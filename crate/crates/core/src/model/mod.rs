//! Decoder-only transformer inference with hook sites and feature clamping.

mod config;
mod dist;
mod engine;
mod sampling;

pub use config::{HookSite, ModelConfig, PositionalScheme, SiteKind};
pub use dist::{kl_divergence, softmax, KL_Q_FLOOR};
pub use engine::{Capture, Intervention, LayerNorm, Model};
pub use sampling::{argmax, DecodeMode, SamplingConfig};
