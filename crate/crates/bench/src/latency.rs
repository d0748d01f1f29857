//! Wall-clock latency of model forwards.

use std::time::{Duration, Instant};

use draftlab::metrics::LatencyProfile;
use draftlab::{ModelConfig, ModelState, TokenId};
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Runs shorter than this many clock ticks are flagged as unreliable.
pub const MIN_TICKS_PER_RUN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyOptions {
    pub warmup: usize,
    pub reps: usize,
    /// Tokens already in the cache before the timed forward.
    #[serde(default = "default_context")]
    pub context: usize,
}

fn default_context() -> usize {
    16
}

impl Default for LatencyOptions {
    fn default() -> Self {
        Self {
            warmup: 3,
            reps: 10,
            context: default_context(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRun {
    pub config: ModelConfig,
    pub block_size: usize,
    pub warmup_count: usize,
    pub repetitions: usize,
    /// Retained samples in seconds, in measurement order.
    pub samples: Vec<f64>,
    pub statistic: String,
    pub median: f64,
    /// Estimated clock granularity in seconds.
    pub timer_resolution: f64,
    /// Median below [`MIN_TICKS_PER_RUN`] clock ticks.
    pub flagged: bool,
}

impl LatencyRun {
    /// Relative spread `(max − min) / median` of the samples.
    pub fn spread(&self) -> f64 {
        let max = self.samples.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.samples.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / self.median
    }
}

pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Smallest nonzero difference between consecutive clock reads.
pub fn timer_resolution() -> f64 {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best.as_secs_f64()
}

/// Times a `block_size`-token forward on top of a `context`-token cache.
pub fn measure_latency(
    state: &ModelState,
    block_size: usize,
    opts: &LatencyOptions,
) -> Result<LatencyRun, BenchError> {
    if opts.reps < 5 {
        return Err(BenchError::Invalid(format!("need at least 5 repetitions, got {}", opts.reps)));
    }
    if block_size == 0 {
        return Err(BenchError::Invalid("block size must be positive".into()));
    }
    let cfg = state.config();
    if opts.context + block_size > cfg.max_seq_len {
        return Err(BenchError::Invalid(format!(
            "context {} + block {block_size} exceeds max_seq_len {}",
            opts.context, cfg.max_seq_len
        )));
    }
    let vocab = cfg.vocab_size as TokenId;
    let tokens: Vec<TokenId> = (0..opts.context + block_size)
        .map(|i| (i as TokenId * 31 + 7) % vocab)
        .collect();
    let (ctx, block) = tokens.split_at(opts.context);
    let mut primed = state.new_cache();
    if !ctx.is_empty() {
        state.forward(ctx, &mut primed)?;
    }
    let mut samples = Vec::with_capacity(opts.reps);
    for i in 0..opts.warmup + opts.reps {
        let mut cache = primed.clone();
        let t0 = Instant::now();
        let logits = state.forward(block, &mut cache)?;
        let dt = t0.elapsed().as_secs_f64();
        std::hint::black_box(&logits);
        if i >= opts.warmup {
            samples.push(dt);
        }
    }
    let med = median(&samples);
    let res = timer_resolution();
    Ok(LatencyRun {
        config: cfg.clone(),
        block_size,
        warmup_count: opts.warmup,
        repetitions: opts.reps,
        statistic: "median".into(),
        median: med,
        timer_resolution: res,
        flagged: med < MIN_TICKS_PER_RUN * res,
        samples,
    })
}

/// Draft single-token, target single-token and target γ-token medians.
pub fn latency_profile(
    draft: &ModelState,
    target: &ModelState,
    gamma: usize,
    opts: &LatencyOptions,
) -> Result<(LatencyProfile, Vec<LatencyRun>), BenchError> {
    let d = measure_latency(draft, 1, opts)?;
    let t1 = measure_latency(target, 1, opts)?;
    let tg = measure_latency(target, gamma, opts)?;
    for r in [&d, &t1, &tg] {
        if r.flagged {
            log::warn!(
                "latency of block {} below {MIN_TICKS_PER_RUN} timer ticks; treat as unreliable",
                r.block_size
            );
        }
    }
    let profile = LatencyProfile {
        l_d: d.median.max(f64::MIN_POSITIVE),
        l_t_1: t1.median.max(f64::MIN_POSITIVE),
        l_t_gamma: tg.median.max(f64::MIN_POSITIVE),
    };
    Ok((profile, vec![d, t1, tg]))
}
