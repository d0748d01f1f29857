//! Model state, initialization and cached inference.
//!
//! The inference path computes every row with a fixed accumulation order that
//! does not depend on how many tokens are fed per call, so a block forward over
//! `n` tokens produces bit-identical logits to `n` single-token cached steps.
//! Speculative verification relies on this for exact greedy equivalence.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Layout, ModelConfig};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

pub const RMS_EPS: f32 = 1e-5;

/// Learned tensors of a decoder-only LM plus the token map it was trained on.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Arc<Layout>,
    pub(crate) tokenizer: Tokenizer,
    pub(crate) params: Vec<f32>,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.tokenizer == other.tokenizer
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Deterministic initialization: gains are one, every other tensor is drawn
/// from `N(0, 1/hidden_size)`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    init_model_with_tokenizer(config, Tokenizer::byte_level(), seed)
}

pub fn init_model_with_tokenizer(
    config: &ModelConfig,
    tokenizer: Tokenizer,
    seed: u64,
) -> Result<ModelState> {
    config.validate()?;
    if config.vocab_size < tokenizer.vocab_size() {
        return Err(Error::Config(format!(
            "vocab_size {} smaller than tokenizer vocabulary {}",
            config.vocab_size,
            tokenizer.vocab_size()
        )));
    }
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / (config.hidden_size as f32).sqrt();
    let normal = Normal::new(0.0f32, std).expect("positive std");
    let mut params: Vec<f32> = (0..layout.total).map(|_| normal.sample(&mut rng)).collect();
    for slot in layout.norm_slots() {
        params[slot.range()].fill(1.0);
    }
    Ok(ModelState {
        config: config.clone(),
        layout: Arc::new(layout),
        tokenizer,
        params,
    })
}

impl ModelState {
    pub(crate) fn from_parts(
        config: ModelConfig,
        tokenizer: Tokenizer,
        params: Vec<f32>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout: Arc::new(layout),
            tokenizer,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Named read-only tensor view, in declared order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[usize], &[f32])> {
        self.layout
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice(), &self.params[t.slot.range()]))
    }

    /// Errors unless `other` uses the same token-id map and vocabulary size.
    pub fn check_compatible(&self, other: &ModelState) -> Result<()> {
        if self.tokenizer != other.tokenizer {
            return Err(Error::Vocabulary(format!(
                "token maps differ ({} vs {})",
                &self.tokenizer.fingerprint()[..12],
                &other.tokenizer.fingerprint()[..12]
            )));
        }
        if self.config.vocab_size != other.config.vocab_size {
            return Err(Error::Vocabulary(format!(
                "vocab_size {} vs {}",
                self.config.vocab_size, other.config.vocab_size
            )));
        }
        Ok(())
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(&self.config)
    }

    /// Runs `tokens` after whatever `cache` already holds and appends their
    /// keys and values. Returns one logit row per new token.
    pub fn forward(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<Logits> {
        let cfg = &self.config;
        let start = cache.filled_len;
        let requested = start + tokens.len();
        if requested > cfg.max_seq_len {
            return Err(Error::Length {
                requested,
                max: cfg.max_seq_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let h = cfg.hidden_size;
        let v = cfg.vocab_size;
        let p = &self.params;
        let lay = &*self.layout;
        let mut logits = Vec::with_capacity(tokens.len() * v);
        // Layers are walked per token so the cache grows position by position.
        let mut x = vec![0.0f32; h];
        let mut xn = vec![0.0f32; h];
        let mut q = vec![0.0f32; h];
        let mut k = vec![0.0f32; cfg.kv_dim()];
        let mut val = vec![0.0f32; cfg.kv_dim()];
        let mut att = vec![0.0f32; h];
        let mut tmp = vec![0.0f32; h];
        let mut gate = vec![0.0f32; cfg.intermediate_size];
        let mut up = vec![0.0f32; cfg.intermediate_size];
        let mut scores = vec![0.0f32; cfg.max_seq_len];
        let rope = Rope::new(cfg);
        for (i, &tok) in tokens.iter().enumerate() {
            let pos = start + i;
            let e = lay.embed.offset + tok as usize * h;
            x.copy_from_slice(&p[e..e + h]);
            for (l, ls) in lay.layers.iter().enumerate() {
                rms_norm_row(&x, &p[ls.attn_norm.range()], &mut xn);
                linear_row(&xn, &p[ls.wq.range()], &mut q);
                linear_row(&xn, &p[ls.wk.range()], &mut k);
                linear_row(&xn, &p[ls.wv.range()], &mut val);
                rope.apply(&mut q, pos, cfg.n_heads);
                rope.apply(&mut k, pos, cfg.n_kv_heads);
                let layer = &mut cache.layers[l];
                layer.k.extend_from_slice(&k);
                layer.v.extend_from_slice(&val);
                attend_row(cfg, &q, &layer.k, &layer.v, pos + 1, &mut scores, &mut att);
                linear_row(&att, &p[ls.wo.range()], &mut tmp);
                add_assign(&mut x, &tmp);

                rms_norm_row(&x, &p[ls.mlp_norm.range()], &mut xn);
                linear_row(&xn, &p[ls.w_gate.range()], &mut gate);
                linear_row(&xn, &p[ls.w_up.range()], &mut up);
                for (g, u) in gate.iter_mut().zip(&up) {
                    *g = silu(*g) * u;
                }
                linear_row(&gate, &p[ls.w_down.range()], &mut tmp);
                add_assign(&mut x, &tmp);
            }
            rms_norm_row(&x, &p[lay.final_norm.range()], &mut xn);
            let row_start = logits.len();
            logits.resize(row_start + v, 0.0);
            let row = &mut logits[row_start..];
            match lay.head {
                Some(slot) => linear_row(&xn, &p[slot.range()], row),
                None => {
                    let table = &p[lay.embed.range()];
                    for (t, out) in row.iter_mut().enumerate() {
                        *out = dot(&xn, &table[t * h..(t + 1) * h]);
                    }
                }
            }
            cache.filled_len = pos + 1;
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("forward logits".into()));
        }
        Ok(Logits { data: logits, vocab: v })
    }

    /// Uncached evaluation of a whole sequence.
    pub fn forward_full(&self, tokens: &[TokenId]) -> Result<Logits> {
        let mut cache = self.new_cache();
        self.forward(tokens, &mut cache)
    }
}

/// Row-major `positions × vocab` logit matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    data: Vec<f32>,
    vocab: usize,
}

impl Logits {
    pub fn rows(&self) -> usize {
        self.data.len() / self.vocab
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn last(&self) -> &[f32] {
        self.row(self.rows() - 1)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, Default)]
struct LayerKv {
    k: Vec<f32>,
    v: Vec<f32>,
}

/// Per-session key/value cache. Rows below `filled_len` are never rewritten;
/// rolling back only shortens the cache.
#[derive(Debug, Clone)]
pub struct KvCache {
    layers: Vec<LayerKv>,
    filled_len: usize,
    kv_dim: usize,
    max_seq_len: usize,
}

impl KvCache {
    pub fn new(cfg: &ModelConfig) -> Self {
        let cap = cfg.max_seq_len * cfg.kv_dim();
        Self {
            layers: (0..cfg.n_layers)
                .map(|_| LayerKv {
                    k: Vec::with_capacity(cap),
                    v: Vec::with_capacity(cap),
                })
                .collect(),
            filled_len: 0,
            kv_dim: cfg.kv_dim(),
            max_seq_len: cfg.max_seq_len,
        }
    }

    pub fn filled_len(&self) -> usize {
        self.filled_len
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    /// Drops every cached position at or beyond `len`.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.filled_len {
            return;
        }
        for layer in &mut self.layers {
            layer.k.truncate(len * self.kv_dim);
            layer.v.truncate(len * self.kv_dim);
        }
        self.filled_len = len;
    }

    pub fn clear(&mut self) {
        self.truncate(0);
    }
}

/// Rotary position tables (half-split pairing).
pub(crate) struct Rope {
    head_dim: usize,
    inv_freq: Vec<f64>,
}

impl Rope {
    pub(crate) fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.head_dim();
        let base = cfg.rope_base as f64;
        let inv_freq = (0..d / 2)
            .map(|i| base.powf(-(2.0 * i as f64) / d as f64))
            .collect();
        Self { head_dim: d, inv_freq }
    }

    pub(crate) fn cos_sin(&self, pos: usize, i: usize) -> (f64, f64) {
        let angle = pos as f64 * self.inv_freq[i];
        (angle.cos(), angle.sin())
    }

    fn apply(&self, x: &mut [f32], pos: usize, heads: usize) {
        let d = self.head_dim;
        let half = d / 2;
        for hd in 0..heads {
            let v = &mut x[hd * d..(hd + 1) * d];
            for i in 0..half {
                let (c, s) = self.cos_sin(pos, i);
                let (c, s) = (c as f32, s as f32);
                let (a, b) = (v[i], v[i + half]);
                v[i] = a * c - b * s;
                v[i + half] = a * s + b * c;
            }
        }
    }
}

fn attend_row(
    cfg: &ModelConfig,
    q: &[f32],
    keys: &[f32],
    values: &[f32],
    len: usize,
    scores: &mut [f32],
    out: &mut [f32],
) {
    let d = cfg.head_dim();
    let kv_dim = cfg.kv_dim();
    let group = cfg.n_heads / cfg.n_kv_heads;
    let scale = 1.0 / (d as f32).sqrt();
    for hd in 0..cfg.n_heads {
        let g = hd / group;
        let qh = &q[hd * d..(hd + 1) * d];
        let mut max = f32::NEG_INFINITY;
        for t in 0..len {
            let kt = &keys[t * kv_dim + g * d..t * kv_dim + (g + 1) * d];
            let s = dot(qh, kt) * scale;
            scores[t] = s;
            max = max.max(s);
        }
        let mut sum = 0.0f32;
        for s in &mut scores[..len] {
            *s = (*s - max).exp();
            sum += *s;
        }
        let oh = &mut out[hd * d..(hd + 1) * d];
        oh.fill(0.0);
        for t in 0..len {
            let w = scores[t] / sum;
            let vt = &values[t * kv_dim + g * d..t * kv_dim + (g + 1) * d];
            for (o, &vv) in oh.iter_mut().zip(vt) {
                *o += w * vv;
            }
        }
    }
}

/// `out = x · W` with `W` stored `[x.len(), out.len()]`.
fn linear_row(x: &[f32], w: &[f32], out: &mut [f32]) {
    let n = out.len();
    out.fill(0.0);
    for (k, &xk) in x.iter().enumerate() {
        let row = &w[k * n..(k + 1) * n];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xk * wv;
        }
    }
}

fn rms_norm_row(x: &[f32], gain: &[f32], out: &mut [f32]) {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let r = 1.0 / (ms + RMS_EPS).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * r * g;
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_assign(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}
