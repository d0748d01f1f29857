//! Lossless speculative decoding.
//!
//! Each block: the draft proposes up to γ tokens one at a time, the target
//! scores the whole proposal in a single forward, and proposals are checked
//! left to right. The first rejection is replaced by a sample from the
//! residual `max(0, p − q)`; a fully accepted block earns a bonus token from
//! the target's next distribution. Either way the block emits
//! `accepted_count + 1` tokens.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DecodeStats;
use crate::model::{KvCache, ModelState};
use crate::sampling::{argmax_f64, sample_index, SamplingMode, SamplingPolicy};
use crate::tokenizer::{TokenId, EOS};

const NORMALIZATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecConfig {
    pub gamma: usize,
    pub policy: SamplingPolicy,
    pub max_new_tokens: usize,
    /// Keep per-position distributions in every [`BlockResult`].
    #[serde(default)]
    pub audit: bool,
    #[serde(default = "yes")]
    pub stop_at_eos: bool,
}

fn yes() -> bool {
    true
}

impl SpecConfig {
    pub fn new(gamma: usize, policy: SamplingPolicy, max_new_tokens: usize) -> Self {
        Self {
            gamma,
            policy,
            max_new_tokens,
            audit: false,
            stop_at_eos: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::InvalidArgument("gamma must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument("max_new_tokens must be positive".into()));
        }
        self.policy.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accept,
    /// Rejected; the replacement token is drawn from this distribution.
    Reject(Vec<f64>),
}

/// Decides one proposed token `x` drawn from `q` against the target's `p`.
///
/// Multinomial: accept iff `u ≤ min(1, p(x)/q(x))`, otherwise resample from
/// `max(0, p − q)` renormalized. Greedy: accept iff `x` is the target argmax
/// (smallest id on ties), otherwise the replacement is that argmax.
pub fn accept_step(
    p_target: &[f64],
    q_draft: &[f64],
    x: TokenId,
    u: f64,
    mode: SamplingMode,
) -> Result<Verdict> {
    if p_target.len() != q_draft.len() {
        return Err(Error::Contract("distributions over different vocabularies".into()));
    }
    for (name, d) in [("target", p_target), ("draft", q_draft)] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL || d.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Contract(format!("{name} distribution sums to {s}")));
        }
    }
    let xi = x as usize;
    if xi >= p_target.len() {
        return Err(Error::Contract(format!("token {x} outside vocabulary")));
    }
    match mode {
        SamplingMode::Greedy => {
            let best = argmax_f64(p_target);
            if best == x {
                Ok(Verdict::Accept)
            } else {
                let mut one_hot = vec![0.0; p_target.len()];
                one_hot[best as usize] = 1.0;
                Ok(Verdict::Reject(one_hot))
            }
        }
        SamplingMode::Multinomial => {
            let (p, q) = (p_target[xi], q_draft[xi]);
            if q <= 0.0 {
                return Err(Error::Contract(format!("proposed token {x} has zero draft mass")));
            }
            if p >= q || u <= p / q {
                return Ok(Verdict::Accept);
            }
            Ok(Verdict::Reject(residual(p_target, q_draft)))
        }
    }
}

/// `max(0, p − q)` normalized; falls back to `p` if the difference vanishes.
pub fn residual(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut r: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).max(0.0)).collect();
    let sum: f64 = r.iter().sum();
    if sum > 0.0 {
        for v in &mut r {
            *v /= sum;
        }
        r
    } else {
        p.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub proposed: Vec<TokenId>,
    pub accepted_count: usize,
    pub emitted: Vec<TokenId>,
    /// Uniform draws used by the acceptance tests, one per examined proposal.
    pub u_values: Vec<f64>,
    #[serde(skip)]
    pub draft_dists: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub target_dists: Option<Vec<Vec<f64>>>,
}

/// JSON-lines audit entry for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub proposed: Vec<TokenId>,
    pub accepted_count: usize,
    pub emitted: Vec<TokenId>,
    pub u_values: Vec<f64>,
}

impl From<&BlockResult> for AuditRecord {
    fn from(b: &BlockResult) -> Self {
        Self {
            proposed: b.proposed.clone(),
            accepted_count: b.accepted_count,
            emitted: b.emitted.clone(),
            u_values: b.u_values.clone(),
        }
    }
}

pub fn write_audit_log<W: Write>(blocks: &[BlockResult], mut w: W) -> Result<()> {
    for b in blocks {
        serde_json::to_writer(&mut w, &AuditRecord::from(b))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_audit_log(text: &str) -> Result<Vec<AuditRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Recomputes a block's accepted count from its recorded distributions and
/// uniforms.
pub fn replay_accepted_count(
    record: &AuditRecord,
    draft_dists: &[Vec<f64>],
    target_dists: &[Vec<f64>],
    mode: SamplingMode,
) -> Result<usize> {
    let mut accepted = 0;
    for (i, &x) in record.proposed.iter().enumerate() {
        let u = record.u_values.get(i).copied().unwrap_or(0.0);
        match accept_step(&target_dists[i], &draft_dists[i], x, u, mode)? {
            Verdict::Accept => accepted += 1,
            Verdict::Reject(_) => break,
        }
    }
    Ok(accepted)
}

/// Single-sequence speculative decoding state over two shared models.
#[derive(Debug, Clone)]
pub struct SpecSession<'a> {
    draft: &'a ModelState,
    target: &'a ModelState,
    draft_cache: KvCache,
    target_cache: KvCache,
    committed: Vec<TokenId>,
    prompt_len: usize,
    rng: ChaCha8Rng,
    blocks: Vec<BlockResult>,
}

impl<'a> SpecSession<'a> {
    pub fn new(
        draft: &'a ModelState,
        target: &'a ModelState,
        prompt: &[TokenId],
        seed: u64,
    ) -> Result<Self> {
        draft.check_compatible(target)?;
        if prompt.is_empty() {
            return Err(Error::InvalidArgument("empty prompt".into()));
        }
        let mut s = Self {
            draft,
            target,
            draft_cache: draft.new_cache(),
            target_cache: target.new_cache(),
            committed: prompt.to_vec(),
            prompt_len: prompt.len(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            blocks: Vec::new(),
        };
        // Prefill all but the last prompt token; that one is fed with the
        // first block.
        let head = &prompt[..prompt.len() - 1];
        if !head.is_empty() {
            draft.forward(head, &mut s.draft_cache)?;
            target.forward(head, &mut s.target_cache)?;
        }
        Ok(s)
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn committed(&self) -> &[TokenId] {
        &self.committed
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.committed[self.prompt_len..]
    }

    pub fn blocks(&self) -> &[BlockResult] {
        &self.blocks
    }

    pub fn target_cache(&self) -> &KvCache {
        &self.target_cache
    }

    pub fn stats(&self, gamma: usize) -> DecodeStats {
        DecodeStats {
            gamma,
            blocks: self.blocks.iter().map(|b| b.accepted_count).collect(),
        }
    }

    fn draw(&mut self, p: &[f64], mode: SamplingMode) -> TokenId {
        match mode {
            SamplingMode::Greedy => argmax_f64(p),
            SamplingMode::Multinomial => sample_index(p, self.rng.random::<f64>()),
        }
    }

    /// Runs one draft-propose / target-verify round and commits its output.
    pub fn speculate_block(&mut self, spec: &SpecConfig) -> Result<BlockResult> {
        spec.validate()?;
        let policy = spec.policy;
        let mode = policy.mode;
        let len = self.committed.len();
        let generated = len - self.prompt_len;
        let remaining = spec.max_new_tokens.saturating_sub(generated);
        let room = self.target.config().max_seq_len.min(self.draft.config().max_seq_len);
        if remaining == 0 || len > room {
            return Err(Error::Length {
                requested: len + 1,
                max: room,
            });
        }
        // Target needs len + gamma positions; emitted tokens fit the budget.
        let gamma = spec.gamma.min(remaining - 1).min(room - len);

        let mut proposed = Vec::with_capacity(gamma);
        let mut q_dists = Vec::with_capacity(gamma);
        if gamma > 0 {
            let pending = self.committed[self.draft_cache.filled_len()..].to_vec();
            let mut logits = self.draft.forward(&pending, &mut self.draft_cache)?;
            for i in 0..gamma {
                let q = policy.distribution(logits.last());
                let x = self.draw(&q, mode);
                proposed.push(x);
                q_dists.push(q);
                if i + 1 < gamma {
                    logits = self.draft.forward(&[x], &mut self.draft_cache)?;
                }
            }
        }

        let mut verify: Vec<TokenId> = self.committed[self.target_cache.filled_len()..].to_vec();
        verify.extend_from_slice(&proposed);
        let logits = self.target.forward(&verify, &mut self.target_cache)?;
        let first = logits.rows() - (gamma + 1);
        let p_dists: Vec<Vec<f64>> = (0..=gamma)
            .map(|i| policy.distribution(logits.row(first + i)))
            .collect();

        let mut accepted = 0;
        let mut u_values = Vec::with_capacity(gamma);
        let mut correction = None;
        for i in 0..gamma {
            let u = match mode {
                SamplingMode::Greedy => 0.0,
                SamplingMode::Multinomial => self.rng.random::<f64>(),
            };
            u_values.push(u);
            match accept_step(&p_dists[i], &q_dists[i], proposed[i], u, mode)? {
                Verdict::Accept => accepted += 1,
                Verdict::Reject(res) => {
                    correction = Some(self.draw(&res, mode));
                    break;
                }
            }
        }
        let last = match correction {
            Some(t) => t,
            None => {
                let bonus = p_dists[gamma].clone();
                self.draw(&bonus, mode)
            }
        };
        let mut emitted: Vec<TokenId> = proposed[..accepted].to_vec();
        emitted.push(last);
        if spec.stop_at_eos {
            if let Some(e) = emitted.iter().position(|&t| t == EOS) {
                emitted.truncate(e + 1);
                accepted = accepted.min(e);
            }
        }

        self.committed.extend_from_slice(&emitted);
        let frontier = self.committed.len() - 1;
        self.target_cache.truncate(frontier);
        self.draft_cache.truncate(frontier);

        let block = BlockResult {
            proposed,
            accepted_count: accepted,
            emitted,
            u_values,
            draft_dists: spec.audit.then_some(q_dists),
            target_dists: spec.audit.then_some(p_dists),
        };
        self.blocks.push(block.clone());
        Ok(block)
    }

    /// Speculates blocks until `max_new_tokens` are emitted or eos appears.
    pub fn generate(&mut self, spec: &SpecConfig) -> Result<Vec<TokenId>> {
        spec.validate()?;
        let need = self.prompt_len + spec.max_new_tokens;
        let room = self.target.config().max_seq_len.min(self.draft.config().max_seq_len);
        if need > room {
            return Err(Error::Length {
                requested: need,
                max: room,
            });
        }
        while self.generated().len() < spec.max_new_tokens {
            let block = self.speculate_block(spec)?;
            if spec.stop_at_eos && block.emitted.last() == Some(&EOS) {
                break;
            }
        }
        Ok(self.generated().to_vec())
    }
}

/// Convenience wrapper: one full speculative generation.
pub fn generate(
    draft: &ModelState,
    target: &ModelState,
    prompt: &[TokenId],
    spec: &SpecConfig,
) -> Result<(Vec<TokenId>, DecodeStats)> {
    let mut session = SpecSession::new(draft, target, prompt, spec.policy.seed)?;
    let tokens = session.generate(spec)?;
    Ok((tokens, session.stats(spec.gamma)))
}
