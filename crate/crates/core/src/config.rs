//! Architecture hyper-parameters and the parameter layout they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters of a pre-norm decoder-only transformer with rotary
/// positions, grouped-query attention and a gated (SwiGLU) MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f32,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// A small config on the shared 264-token byte vocabulary.
    pub fn tiny(hidden_size: usize, n_layers: usize) -> Self {
        Self {
            hidden_size,
            intermediate_size: hidden_size * 2,
            n_layers,
            n_heads: 2,
            n_kv_heads: 1,
            vocab_size: 264,
            max_seq_len: 256,
            rope_base: 10_000.0,
            tie_embeddings: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(Error::Config("rope_base must be a positive real".into()));
        }
        if !self.hidden_size.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} not divisible by n_heads {}",
                self.hidden_size, self.n_heads
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Config(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head_dim {} must be even for rotary positions",
                self.head_dim()
            )));
        }
        Ok(())
    }

    /// Parameters in one decoder block.
    pub fn per_layer_params(&self) -> usize {
        let h = self.hidden_size;
        let attn = 2 * h * h + 2 * h * self.kv_dim();
        let mlp = 3 * h * self.intermediate_size;
        attn + mlp + 2 * h
    }

    /// Exact element count of every tensor. With `exclude_embedding_tables`
    /// the input embedding and an untied output head are left out.
    pub fn param_count(&self, exclude_embedding_tables: bool) -> usize {
        let table = self.vocab_size * self.hidden_size;
        let body = self.n_layers * self.per_layer_params() + self.hidden_size;
        if exclude_embedding_tables {
            body
        } else if self.tie_embeddings {
            body + table
        } else {
            body + 2 * table
        }
    }
}

/// Index of a tensor inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSlots {
    pub attn_norm: Slot,
    pub wq: Slot,
    pub wk: Slot,
    pub wv: Slot,
    pub wo: Slot,
    pub mlp_norm: Slot,
    pub w_gate: Slot,
    pub w_up: Slot,
    pub w_down: Slot,
}

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub slot: Slot,
}

/// Flat parameter layout, a pure function of the config.
///
/// Matrices are stored row-major as `[in, out]` so that a linear map is
/// `y = x · W`. The embedding table is `[vocab, hidden]`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: Slot,
    pub layers: Vec<LayerSlots>,
    pub final_norm: Slot,
    /// `None` when the head is tied to the embedding table.
    pub head: Option<Slot>,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_size;
        let kv = cfg.kv_dim();
        let inter = cfg.intermediate_size;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            let slot = Slot { offset, len };
            offset += len;
            tensors.push(TensorSpec { name, shape, slot });
            slot
        };
        let embed = push("embed".into(), vec![cfg.vocab_size, h]);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerSlots {
                attn_norm: push(p("attn_norm"), vec![h]),
                wq: push(p("wq"), vec![h, h]),
                wk: push(p("wk"), vec![h, kv]),
                wv: push(p("wv"), vec![h, kv]),
                wo: push(p("wo"), vec![h, h]),
                mlp_norm: push(p("mlp_norm"), vec![h]),
                w_gate: push(p("w_gate"), vec![h, inter]),
                w_up: push(p("w_up"), vec![h, inter]),
                w_down: push(p("w_down"), vec![inter, h]),
            });
        }
        let final_norm = push("final_norm".into(), vec![h]);
        let head = (!cfg.tie_embeddings).then(|| push("lm_head".into(), vec![h, cfg.vocab_size]));
        Self {
            embed,
            layers,
            final_norm,
            head,
            tensors,
            total: offset,
        }
    }

    /// Slots of the normalization gains.
    pub fn norm_slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.layers
            .iter()
            .flat_map(|l| [l.attn_norm, l.mlp_norm])
            .chain(std::iter::once(self.final_norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(tie: bool) -> ModelConfig {
        ModelConfig {
            hidden_size: 4,
            intermediate_size: 8,
            n_layers: 1,
            n_heads: 2,
            n_kv_heads: 2,
            vocab_size: 10,
            max_seq_len: 16,
            rope_base: 10_000.0,
            tie_embeddings: tie,
        }
    }

    #[test]
    fn hand_summed_counts() {
        // emb 40 + attn 64 + mlp 96 + norms 12 + head 40
        let cfg = small(false);
        assert_eq!(cfg.param_count(false), 252);
        assert_eq!(cfg.param_count(true), 172);
        assert_eq!(Layout::new(&cfg).total, 252);
    }

    #[test]
    fn tying_removes_one_table() {
        let cfg = small(true);
        assert_eq!(cfg.param_count(false), 252 - 40);
        assert_eq!(cfg.param_count(true), 172);
        assert_eq!(Layout::new(&cfg).total, 212);
    }

    #[test]
    fn depth_is_linear_in_excluded_mode() {
        let mut cfg = small(false);
        let one = cfg.param_count(true);
        cfg.n_layers = 2;
        assert_eq!(cfg.param_count(true), one + cfg.per_layer_params());
    }

    #[test]
    fn excluded_count_ignores_vocab() {
        let mut cfg = small(false);
        let a = cfg.param_count(true);
        cfg.vocab_size = 5000;
        assert_eq!(cfg.param_count(true), a);
    }

    #[test]
    fn divisibility_checked() {
        let mut cfg = ModelConfig::tiny(512, 2);
        cfg.n_heads = 7;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::tiny(8, 2);
        cfg.n_heads = 4;
        cfg.n_kv_heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn layout_matches_count_with_gqa() {
        let cfg = ModelConfig::tiny(16, 3);
        assert_eq!(Layout::new(&cfg).total, cfg.param_count(false));
    }
}
