//! Target-generated alignment data: responses to seed instructions under
//! several sampling configurations, plus self-prompted instructions.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::generate_autoregressive;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::sampling::SamplingPolicy;
use crate::tokenizer::{instruction_sequence, TokenId, BOS, EOS, INST, RESP};
use crate::train::TrainExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Original,
    TargetGenerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSample {
    pub instruction: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub source: SampleSource,
    /// `None` for greedy responses and original data.
    pub temperature: Option<f32>,
    /// Instruction written by the model itself.
    #[serde(default)]
    pub self_prompted: bool,
    /// Response hit the length limit without an eos.
    #[serde(default)]
    pub truncated: bool,
}

impl AlignmentSample {
    pub fn original(instruction: Vec<TokenId>, response: Vec<TokenId>) -> Self {
        Self {
            instruction,
            response,
            source: SampleSource::Original,
            temperature: None,
            self_prompted: false,
            truncated: false,
        }
    }

    /// `<bos> <inst> instruction <resp> response <eos>`.
    pub fn sequence(&self) -> Vec<TokenId> {
        instruction_sequence(&self.instruction, &self.response)
    }

    /// Loss boundary: index of the `<resp>` separator in [`Self::sequence`].
    pub fn mask_boundary(&self) -> usize {
        self.instruction.len() + 2
    }

    /// Training example supervised on response tokens only.
    pub fn to_example(&self) -> TrainExample {
        TrainExample::masked(self.sequence())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentOptions {
    pub temperatures: Vec<f32>,
    pub include_greedy: bool,
    pub self_prompt_count: usize,
    pub max_response_tokens: usize,
    pub max_instruction_tokens: usize,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        Self {
            temperatures: vec![0.6, 0.8, 1.0],
            include_greedy: true,
            self_prompt_count: 0,
            max_response_tokens: 64,
            max_instruction_tokens: 48,
        }
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn respond(
    target: &ModelState,
    instruction: &[TokenId],
    policy: &SamplingPolicy,
    max_tokens: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TokenId>, bool)> {
    let mut prompt = vec![BOS, INST];
    prompt.extend_from_slice(instruction);
    prompt.push(RESP);
    let g = generate_autoregressive(target, &prompt, policy, max_tokens, &[EOS], rng)?;
    let mut resp = g.tokens;
    if resp.last() == Some(&EOS) {
        resp.pop();
    }
    Ok((resp, g.truncated))
}

/// One target response per seed instruction and sampling configuration
/// (greedy first, then each temperature), followed by `self_prompt_count`
/// samples whose instruction the target wrote from a bare `<bos> <inst>`
/// prefix. Every sample draws from its own rng stream `(seed, index)`.
pub fn generate_alignment_set(
    target: &ModelState,
    seeds: &[Vec<TokenId>],
    opts: &AlignmentOptions,
    seed: u64,
) -> Result<Vec<AlignmentSample>> {
    let mut configs: Vec<(SamplingPolicy, Option<f32>)> = Vec::new();
    if opts.include_greedy {
        configs.push((SamplingPolicy::greedy(), None));
    }
    for &t in &opts.temperatures {
        configs.push((SamplingPolicy::multinomial(t, seed), Some(t)));
    }
    if configs.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one temperature or greedy decoding".into(),
        ));
    }
    for (pol, _) in &configs {
        pol.validate()?;
    }
    let mut out = Vec::with_capacity(seeds.len() * configs.len() + opts.self_prompt_count);
    let mut index = 0u64;
    for instr in seeds {
        for (pol, temp) in &configs {
            let mut rng = sample_rng(seed, index);
            index += 1;
            let (response, truncated) = respond(target, instr, pol, opts.max_response_tokens, &mut rng)?;
            out.push(AlignmentSample {
                instruction: instr.clone(),
                response,
                source: SampleSource::TargetGenerated,
                temperature: *temp,
                self_prompted: false,
                truncated,
            });
        }
    }
    // Self-prompting uses the last configuration.
    let (pol, temp) = configs[configs.len() - 1];
    for _ in 0..opts.self_prompt_count {
        let mut rng = sample_rng(seed, index);
        index += 1;
        let g = generate_autoregressive(
            target,
            &[BOS, INST],
            &pol,
            opts.max_instruction_tokens,
            &[RESP, EOS],
            &mut rng,
        )?;
        let instruction: Vec<TokenId> = g.tokens.into_iter().filter(|&t| t != RESP && t != EOS).collect();
        let (response, truncated) = respond(target, &instruction, &pol, opts.max_response_tokens, &mut rng)?;
        out.push(AlignmentSample {
            instruction,
            response,
            source: SampleSource::TargetGenerated,
            temperature: temp,
            self_prompted: true,
            truncated: truncated || g.truncated,
        });
    }
    Ok(out)
}

pub fn write_alignment_jsonl<W: Write>(samples: &[AlignmentSample], mut w: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_alignment_jsonl<R: BufRead>(r: R) -> Result<Vec<AlignmentSample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("alignment line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn load_alignment(path: impl AsRef<Path>) -> Result<Vec<AlignmentSample>> {
    read_alignment_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_alignment(samples: &[AlignmentSample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_alignment_jsonl(samples, &mut w)?;
    w.flush()?;
    Ok(())
}
