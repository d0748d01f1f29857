//! Acceptance-rate evaluation over a benchmark × sampling mode × γ grid.

use std::collections::BTreeMap;

use draftlab::data::{make_completion_tasks, make_instruction_tasks, Corpus, CompletionTask};
use draftlab::metrics::{DecodeStats, LatencyProfile, MetricsRow};
use draftlab::specdec;
use draftlab::tokenizer::BOS;
use draftlab::{ModelState, SamplingMode, SamplingPolicy, SpecConfig, TokenId};

use crate::latency::{latency_profile, LatencyRun};
use crate::pipeline::{BenchmarkSpec, EvalSpec, TaskKind};
use crate::{BenchError, Result};

/// Benchmark prompts, each cut to leave room for `max_new_tokens`.
pub fn build_tasks(
    spec: &BenchmarkSpec,
    corpora: &BTreeMap<String, Corpus>,
    room: usize,
) -> Result<Vec<CompletionTask>> {
    let corpus = corpora
        .get(&spec.corpus)
        .ok_or_else(|| BenchError::Invalid(format!("unknown corpus {}", spec.corpus)))?;
    if spec.max_new_tokens + 2 > room {
        return Err(BenchError::Invalid(format!(
            "benchmark {}: {} new tokens leave no room for a prompt",
            spec.name, spec.max_new_tokens
        )));
    }
    let mut tasks = match spec.task {
        TaskKind::Completion { min_ctx } => make_completion_tasks(corpus, spec.n_tasks, min_ctx, spec.seed)?,
        TaskKind::Instruction => make_instruction_tasks(corpus, spec.n_tasks, spec.seed)?,
    };
    let keep = room - spec.max_new_tokens;
    for t in &mut tasks {
        if t.context.len() > keep {
            // Keep the leading bos and the most recent context.
            let tail = t.context.split_off(t.context.len() - (keep - 1));
            t.context = std::iter::once(BOS).chain(tail).collect();
        }
    }
    Ok(tasks)
}

fn cell_seed(base: u64, bench: usize, gamma: usize, task: usize) -> u64 {
    base ^ ((bench as u64) << 48) ^ ((gamma as u64) << 32) ^ task as u64
}

pub fn policy_for(mode: SamplingMode, temperature: f64, seed: u64) -> SamplingPolicy {
    match mode {
        SamplingMode::Greedy => SamplingPolicy::greedy(),
        SamplingMode::Multinomial => SamplingPolicy::multinomial(temperature as f32, seed),
    }
}

/// Accepted counts of every block over a task set.
pub fn decode_tasks(
    draft: &ModelState,
    target: &ModelState,
    tasks: &[CompletionTask],
    gamma: usize,
    mode: SamplingMode,
    temperature: f64,
    max_new_tokens: usize,
    seed_of: impl Fn(usize) -> u64,
) -> Result<(DecodeStats, Vec<Vec<TokenId>>)> {
    let mut stats = DecodeStats {
        gamma,
        blocks: Vec::new(),
    };
    let mut outputs = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let spec = SpecConfig::new(gamma, policy_for(mode, temperature, seed_of(i)), max_new_tokens);
        let (tokens, s) = specdec::generate(draft, target, &t.context, &spec)?;
        stats.merge(&s)?;
        outputs.push(tokens);
    }
    Ok((stats, outputs))
}

/// Evaluation output for one draft.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub rows: Vec<MetricsRow>,
    pub latency: Vec<LatencyRun>,
}

/// Runs every (benchmark, mode, γ) cell. `c_hat` is the draft/target
/// parameter ratio over all tensors.
pub fn evaluate(
    draft: &ModelState,
    target: &ModelState,
    spec: &EvalSpec,
    corpora: &BTreeMap<String, Corpus>,
) -> Result<EvalOutput> {
    draft.check_compatible(target)?;
    let room = draft.config().max_seq_len.min(target.config().max_seq_len);
    let c_hat = draft.config().param_count(false) as f64 / target.config().param_count(false) as f64;
    let mut profiles: BTreeMap<usize, LatencyProfile> = BTreeMap::new();
    let mut latency = Vec::new();
    if let Some(opts) = &spec.latency {
        for &g in &spec.gammas {
            let (p, runs) = latency_profile(draft, target, g, opts)?;
            profiles.insert(g, p);
            latency.extend(runs);
        }
    }
    let mut rows = Vec::new();
    for (bi, bench) in spec.benchmarks.iter().enumerate() {
        let tasks = build_tasks(bench, corpora, room).map_err(|e| e.in_stage(format!("benchmark {}", bench.name)))?;
        for &mode in &spec.modes {
            for &gamma in &spec.gammas {
                let (stats, _) = decode_tasks(
                    draft,
                    target,
                    &tasks,
                    gamma,
                    mode,
                    spec.temperature,
                    bench.max_new_tokens,
                    |i| cell_seed(spec.seed, bi, gamma, i),
                )
                .map_err(|e| e.in_stage(format!("eval {}/{}/{gamma}", bench.name, mode.as_str())))?;
                let temperature = match mode {
                    SamplingMode::Greedy => 0.0,
                    SamplingMode::Multinomial => spec.temperature,
                };
                rows.push(MetricsRow::from_stats(
                    &bench.name,
                    mode.as_str(),
                    temperature,
                    &stats,
                    c_hat,
                    profiles.get(&gamma),
                )?);
            }
        }
    }
    Ok(EvalOutput { rows, latency })
}
