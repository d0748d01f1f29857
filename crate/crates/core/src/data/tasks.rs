use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::tokenizer::{instruction_prompt, TokenId, Tokenizer, BOS};

/// A benchmark prompt and the reference text that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionTask {
    /// Tokens fed to the models, including the leading special tokens.
    pub context: Vec<TokenId>,
    pub reference: Vec<TokenId>,
    pub document: usize,
    /// Number of document tokens in the context.
    pub split: usize,
}

/// Splits documents at a uniform random position `≥ min_ctx`; the prefix
/// becomes the context. Eligible documents are visited in a seeded shuffled
/// order, cycling when more tasks than documents are requested.
pub fn make_completion_tasks(
    corpus: &Corpus,
    n_tasks: usize,
    min_ctx: usize,
    seed: u64,
) -> Result<Vec<CompletionTask>> {
    if n_tasks == 0 {
        return Ok(Vec::new());
    }
    let tok = Tokenizer::byte_level();
    let mut eligible: Vec<(usize, Vec<TokenId>)> = corpus
        .documents()
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.text_tokens(&tok)))
        .filter(|(_, t)| t.len() > min_ctx)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Data(format!("no document longer than {min_ctx} tokens")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let mut tasks = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let (doc, toks) = &eligible[i % eligible.len()];
        let split = rng.random_range(min_ctx..toks.len());
        let mut context = Vec::with_capacity(split + 1);
        context.push(BOS);
        context.extend_from_slice(&toks[..split]);
        tasks.push(CompletionTask {
            context,
            reference: toks[split..].to_vec(),
            document: *doc,
            split,
        });
    }
    Ok(tasks)
}

/// Instruction-following prompts (`<bos> <inst> … <resp>`) from instruction
/// documents; the reference is the document's response.
pub fn make_instruction_tasks(corpus: &Corpus, n_tasks: usize, seed: u64) -> Result<Vec<CompletionTask>> {
    let tok = Tokenizer::byte_level();
    let mut docs: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus.documents()[i].response.is_some())
        .collect();
    if n_tasks == 0 {
        return Ok(Vec::new());
    }
    if docs.is_empty() {
        return Err(Error::Data("corpus has no instruction documents".into()));
    }
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..n_tasks)
        .map(|i| {
            let d = &corpus.documents()[docs[i % docs.len()]];
            let instr = d.text_tokens(&tok);
            CompletionTask {
                context: instruction_prompt(&instr),
                reference: tok.encode(d.response.as_deref().unwrap_or("").as_bytes()),
                document: docs[i % docs.len()],
                split: instr.len(),
            }
        })
        .collect())
}
