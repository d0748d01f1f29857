//! Desk-scale speculative decoding: tiny decoder-only models, draft training
//! and distillation, a lossless draft/target decoding engine, and the
//! acceptance and speedup metrics used to evaluate drafts.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sampling;
pub mod specdec;
pub mod tokenizer;
pub mod train;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use model::{init_model, KvCache, Logits, ModelState};
pub use sampling::{SamplingMode, SamplingPolicy};
pub use specdec::{SpecConfig, SpecSession};
pub use tokenizer::{TokenId, Tokenizer};
