//! Declarative experiment configuration and the data each stage trains on.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use draftlab::data::alignment::{generate_alignment_set, AlignmentOptions, AlignmentSample};
use draftlab::data::synthetic::{ResponseStyle, SyntheticWorld};
use draftlab::data::{mix, Corpus, MixPart, MixSpec};
use draftlab::tokenizer::Tokenizer;
use draftlab::train::{extract_sparse_logits, pack_documents, LossSpec, TrainExample, TrainSchedule};
use draftlab::{checkpoint, init_model, ModelConfig, ModelState, SamplingMode};
use serde::{Deserialize, Serialize};

use crate::arch::BudgetSearchSpec;
use crate::latency::LatencyOptions;
use crate::{derive_seed, BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Text,
    Code,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// JSONL file of documents.
    File { path: PathBuf },
    Synthetic {
        content: SyntheticKind,
        docs: usize,
        seed: u64,
        #[serde(default)]
        style: Option<ResponseStyle>,
    },
}

impl CorpusSource {
    pub fn load(&self, base: &Path, run_seed: u64) -> Result<Corpus> {
        match self {
            CorpusSource::File { path } => Ok(Corpus::load(base.join(path))?),
            CorpusSource::Synthetic {
                content,
                docs,
                seed,
                style,
            } => {
                let mut w = SyntheticWorld::new(derive_seed(run_seed, *seed));
                Ok(match content {
                    SyntheticKind::Text => w.text_corpus(*docs),
                    SyntheticKind::Code => w.code_corpus(*docs),
                    SyntheticKind::Instruction => {
                        w.instruction_corpus(*docs, style.unwrap_or(ResponseStyle::Assistant))
                    }
                })
            }
        }
    }
}

/// Loads every named corpus; relative file paths resolve against `base`.
pub fn load_corpora(
    sources: &BTreeMap<String, CorpusSource>,
    base: &Path,
    run_seed: u64,
) -> Result<BTreeMap<String, Corpus>> {
    sources
        .iter()
        .map(|(name, src)| {
            src.load(base, run_seed)
                .map(|c| (name.clone(), c))
                .map_err(|e| e.in_stage(format!("corpus {name}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Init { config: ModelConfig, seed: u64 },
    Checkpoint { path: PathBuf },
    /// Final state of a previously declared draft.
    Draft { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// Documents packed into full-supervision windows. With `budgets`, each
    /// corpus is subsampled to its token budget and the parts interleaved.
    Packed {
        corpora: Vec<String>,
        #[serde(default)]
        budgets: Option<Vec<usize>>,
        #[serde(default)]
        seed: u64,
    },
    /// Instruction documents with their original responses.
    Instructions { corpus: String },
    /// The target's own responses to the corpus instructions.
    TargetGenerated {
        corpus: String,
        #[serde(default)]
        options: AlignmentOptions,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        max_seeds: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub data: DataSpec,
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub loss: LossSpec,
    pub seed: u64,
    /// Attach the target's top-k logits to every example.
    #[serde(default)]
    pub distill_top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPlan {
    pub name: String,
    pub source: ModelSource,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Continue a document from a random split point.
    Completion { min_ctx: usize },
    /// Answer an instruction.
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub corpus: String,
    pub task: TaskKind,
    pub n_tasks: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

fn default_modes() -> Vec<SamplingMode> {
    vec![SamplingMode::Greedy, SamplingMode::Multinomial]
}

fn default_gammas() -> Vec<usize> {
    vec![3, 5]
}

fn default_temperature() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub benchmarks: Vec<BenchmarkSpec>,
    #[serde(default = "default_modes")]
    pub modes: Vec<SamplingMode>,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    /// Measure latencies for the c / TPOT / speedup columns.
    #[serde(default)]
    pub latency: Option<LatencyOptions>,
}

fn default_arch_gamma() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSearchPlan {
    pub search: BudgetSearchSpec,
    pub benchmark: String,
    #[serde(default = "default_arch_gamma")]
    pub gamma: usize,
    #[serde(default = "default_arch_mode")]
    pub mode: SamplingMode,
    pub init_seed: u64,
    /// Train every candidate with this draft's stages before evaluating.
    #[serde(default)]
    pub stages_from: Option<String>,
    #[serde(default)]
    pub latency: LatencyOptions,
}

fn default_arch_mode() -> SamplingMode {
    SamplingMode::Greedy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Run-level seed mixed into every component seed.
    #[serde(default)]
    pub seed: u64,
    pub corpora: BTreeMap<String, CorpusSource>,
    pub target: ModelPlan,
    #[serde(default)]
    pub drafts: Vec<ModelPlan>,
    pub evaluation: EvalSpec,
    #[serde(default)]
    pub arch_search: Option<ArchSearchPlan>,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = vec![self.target.name.as_str()];
        for d in &self.drafts {
            if names.contains(&d.name.as_str()) {
                return Err(BenchError::Invalid(format!("duplicate model name {:?}", d.name)));
            }
            if let ModelSource::Draft { name } = &d.source {
                if !names[1..].contains(&name.as_str()) {
                    return Err(BenchError::Invalid(format!(
                        "draft {:?} starts from {name:?}, which is not an earlier draft",
                        d.name
                    )));
                }
            }
            names.push(&d.name);
        }
        if matches!(self.target.source, ModelSource::Draft { .. }) {
            return Err(BenchError::Invalid("the target cannot start from a draft".into()));
        }
        for plan in std::iter::once(&self.target).chain(&self.drafts) {
            for s in &plan.stages {
                s.schedule.validate()?;
                s.loss.validate()?;
                if s.loss.needs_teacher() && s.distill_top_k.is_none() {
                    return Err(BenchError::Invalid(format!(
                        "stage {}/{} uses KL/TVD without distill_top_k",
                        plan.name, s.name
                    )));
                }
            }
        }
        for b in &self.evaluation.benchmarks {
            if !self.corpora.contains_key(&b.corpus) {
                return Err(BenchError::Invalid(format!("benchmark {} uses unknown corpus {}", b.name, b.corpus)));
            }
        }
        if self.evaluation.gammas.contains(&0) {
            return Err(BenchError::Invalid("gamma grid contains 0".into()));
        }
        if let Some(a) = &self.arch_search {
            if !self.evaluation.benchmarks.iter().any(|b| b.name == a.benchmark) {
                return Err(BenchError::Invalid(format!("arch search benchmark {} not declared", a.benchmark)));
            }
            if let Some(from) = &a.stages_from {
                if !self.drafts.iter().any(|d| &d.name == from) {
                    return Err(BenchError::Invalid(format!("arch search stages_from {from} is not a draft")));
                }
            }
        }
        Ok(())
    }
}

/// Builds the initial state for a plan.
pub fn resolve_source(
    source: &ModelSource,
    base: &Path,
    run_seed: u64,
    finished: &BTreeMap<String, ModelState>,
) -> Result<ModelState> {
    match source {
        ModelSource::Init { config, seed } => Ok(init_model(config, derive_seed(run_seed, *seed))?),
        ModelSource::Checkpoint { path } => Ok(checkpoint::load(base.join(path))?),
        ModelSource::Draft { name } => finished
            .get(name)
            .cloned()
            .ok_or_else(|| BenchError::Invalid(format!("unknown draft {name}"))),
    }
}

/// Training examples for one stage, plus any target-generated samples so the
/// caller can store them.
pub struct StageData {
    pub examples: Vec<TrainExample>,
    pub alignment: Option<Vec<AlignmentSample>>,
}

pub fn build_stage_data(
    spec: &StageSpec,
    corpora: &BTreeMap<String, Corpus>,
    target: Option<&ModelState>,
    run_seed: u64,
) -> Result<StageData> {
    let tok = Tokenizer::byte_level();
    let get = |name: &String| {
        corpora
            .get(name)
            .ok_or_else(|| BenchError::Invalid(format!("unknown corpus {name}")))
    };
    let (mut examples, alignment) = match &spec.data {
        DataSpec::Packed { corpora: names, budgets, seed } => {
            let corpus = match budgets {
                Some(b) => {
                    if b.len() != names.len() {
                        return Err(BenchError::Invalid("one budget per packed corpus".into()));
                    }
                    let parts = names
                        .iter()
                        .zip(b)
                        .map(|(n, &t)| MixPart {
                            corpus: n.clone(),
                            token_budget: t,
                        })
                        .collect();
                    mix(
                        &MixSpec {
                            parts,
                            seed: derive_seed(run_seed, *seed),
                        },
                        corpora,
                    )?
                }
                None => {
                    let mut docs = Vec::new();
                    for n in names {
                        docs.extend_from_slice(get(n)?.documents());
                    }
                    Corpus::new(docs)
                }
            };
            (pack_documents(&corpus.training_sequences(&tok), spec.schedule.seq_len), None)
        }
        DataSpec::Instructions { corpus } => {
            let ex = get(corpus)?
                .documents()
                .iter()
                .filter_map(|d| {
                    let r = d.response.as_ref()?;
                    Some(AlignmentSample::original(tok.encode(d.text.as_bytes()), tok.encode(r.as_bytes())).to_example())
                })
                .collect();
            (ex, None)
        }
        DataSpec::TargetGenerated {
            corpus,
            options,
            seed,
            max_seeds,
        } => {
            let target = target.ok_or_else(|| BenchError::Invalid("target-generated data needs a target".into()))?;
            let mut seeds: Vec<Vec<u32>> = get(corpus)?
                .documents()
                .iter()
                .filter(|d| d.response.is_some())
                .map(|d| tok.encode(d.text.as_bytes()))
                .collect();
            if let Some(m) = max_seeds {
                seeds.truncate(*m);
            }
            let samples = generate_alignment_set(target, &seeds, options, derive_seed(run_seed, *seed))?;
            let ex = samples.iter().map(AlignmentSample::to_example).collect();
            (ex, Some(samples))
        }
    };
    if examples.is_empty() {
        return Err(BenchError::Invalid(format!("stage {} has no training examples", spec.name)));
    }
    if let Some(k) = spec.distill_top_k {
        let teacher = target.ok_or_else(|| BenchError::Invalid("distillation needs a target".into()))?;
        let max = teacher.config().max_seq_len.min(spec.schedule.seq_len + 1);
        for ex in &mut examples {
            ex.tokens.truncate(max);
            ex.mask.truncate(ex.tokens.len().saturating_sub(1));
        }
        let seqs: Vec<Vec<u32>> = examples.iter().map(|e| e.tokens.clone()).collect();
        let data = extract_sparse_logits(teacher, &seqs, k)?;
        for (ex, seq) in examples.iter_mut().zip(data.sequences) {
            ex.teacher = Some(seq.records);
        }
    }
    Ok(StageData { examples, alignment })
}
