//! Corpora, token-budget subsampling and mixing, benchmark tasks and
//! synthetic alignment sets.

pub mod alignment;
pub mod synthetic;
pub mod tasks;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{instruction_sequence, TokenId, Tokenizer};

pub use alignment::{generate_alignment_set, AlignmentOptions, AlignmentSample, SampleSource};
pub use tasks::{make_completion_tasks, make_instruction_tasks, CompletionTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Text,
    Code,
    Instruction,
}

/// One corpus line. Instruction documents carry their reference response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub tag: Tag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl Document {
    pub fn new(text: impl Into<String>, tag: Tag) -> Self {
        Self {
            text: text.into(),
            tag,
            response: None,
        }
    }

    pub fn instruction(text: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            tag: Tag::Instruction,
            response: Some(response.into()),
        }
    }

    /// Tokens counted against budgets: text plus response, if any.
    pub fn token_len(&self) -> usize {
        self.text.len() + self.response.as_ref().map_or(0, |r| r.len())
    }

    pub fn text_tokens(&self, tok: &Tokenizer) -> Vec<TokenId> {
        tok.encode(self.text.as_bytes())
    }

    /// Training tokens: plain bytes, or the full instruction layout.
    pub fn training_tokens(&self, tok: &Tokenizer) -> Vec<TokenId> {
        match &self.response {
            Some(r) => instruction_sequence(&tok.encode(self.text.as_bytes()), &tok.encode(r.as_bytes())),
            None => self.text_tokens(tok),
        }
    }
}

/// Ordered, immutable collection of tagged documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    token_count: usize,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        let token_count = documents.iter().map(Document::token_len).sum();
        Self {
            documents,
            token_count,
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn max_doc_len(&self) -> usize {
        self.documents.iter().map(Document::token_len).max().unwrap_or(0)
    }

    /// Token totals per tag.
    pub fn tag_histogram(&self) -> BTreeMap<Tag, usize> {
        let mut h = BTreeMap::new();
        for d in &self.documents {
            *h.entry(d.tag).or_insert(0) += d.token_len();
        }
        h
    }

    pub fn training_sequences(&self, tok: &Tokenizer) -> Vec<Vec<TokenId>> {
        self.documents.iter().map(|d| d.training_tokens(tok)).collect()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut docs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("corpus line {}: {e}", i + 1)))?;
            docs.push(doc);
        }
        Ok(Self::new(docs))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for d in &self.documents {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Draws whole documents uniformly without replacement until `token_budget`
/// is first met or exceeded.
pub fn subsample(corpus: &Corpus, token_budget: usize, seed: u64) -> Result<Corpus> {
    if token_budget > corpus.token_count() {
        return Err(Error::Data(format!(
            "budget {token_budget} exceeds corpus size {}",
            corpus.token_count()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken = Vec::new();
    let mut total = 0;
    for i in order {
        if total >= token_budget {
            break;
        }
        let d = &corpus.documents[i];
        total += d.token_len();
        taken.push(d.clone());
    }
    Ok(Corpus::new(taken))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPart {
    pub corpus: String,
    pub token_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub parts: Vec<MixPart>,
    pub seed: u64,
}

/// Subsamples each part to its budget, then interleaves the parts so that at
/// every point each part has contributed tokens in proportion to its share.
pub fn mix(spec: &MixSpec, corpora: &BTreeMap<String, Corpus>) -> Result<Corpus> {
    if spec.parts.iter().map(|p| p.token_budget).sum::<usize>() == 0 {
        return Err(Error::Data("mixture with zero total budget".into()));
    }
    let mut parts = Vec::with_capacity(spec.parts.len());
    for (i, part) in spec.parts.iter().enumerate() {
        let src = corpora
            .get(&part.corpus)
            .ok_or_else(|| Error::Data(format!("unknown corpus {:?}", part.corpus)))?;
        let seed = spec.seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        parts.push(subsample(src, part.token_budget, seed)?);
    }
    let mut cursor = vec![0usize; parts.len()];
    let mut used = vec![0usize; parts.len()];
    let mut out = Vec::new();
    loop {
        // Least-advanced part (by fraction of its own tokens) goes next.
        let next = (0..parts.len())
            .filter(|&i| cursor[i] < parts[i].len())
            .min_by(|&a, &b| {
                let fa = used[a] as f64 / parts[a].token_count().max(1) as f64;
                let fb = used[b] as f64 / parts[b].token_count().max(1) as f64;
                fa.total_cmp(&fb).then(a.cmp(&b))
            });
        let Some(i) = next else { break };
        let d = &parts[i].documents[cursor[i]];
        used[i] += d.token_len();
        out.push(d.clone());
        cursor[i] += 1;
    }
    Ok(Corpus::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(tag: Tag, n: usize, len: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| Document::new(format!("{i:0>width$}", width = len), tag))
                .collect(),
        )
    }

    #[test]
    fn full_budget_is_a_permutation() {
        let c = corpus(Tag::Text, 20, 10);
        let s = subsample(&c, c.token_count(), 3).unwrap();
        assert_eq!(s.token_count(), c.token_count());
        let mut a: Vec<_> = s.documents().iter().map(|d| d.text.clone()).collect();
        let mut b: Vec<_> = c.documents().iter().map(|d| d.text.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_budget_is_empty() {
        let c = corpus(Tag::Text, 5, 10);
        assert!(subsample(&c, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn over_budget_errors() {
        let c = corpus(Tag::Text, 5, 10);
        assert!(matches!(subsample(&c, 51, 1), Err(Error::Data(_))));
    }

    #[test]
    fn budget_slack_bounded_by_longest_doc() {
        let docs: Vec<Document> = (0..60)
            .map(|i| Document::new("x".repeat(5 + (i * 7) % 40), Tag::Text))
            .collect();
        let c = Corpus::new(docs);
        let a = subsample(&c, 500, 1).unwrap();
        let b = subsample(&c, 500, 2).unwrap();
        assert_ne!(a, b);
        for s in [&a, &b] {
            // recount independently
            let n: usize = s.documents().iter().map(|d| d.text.len()).sum();
            assert!(n >= 500 && n < 500 + c.max_doc_len());
        }
    }

    #[test]
    fn mix_matches_budgets() {
        let mut corpora = BTreeMap::new();
        corpora.insert("code".to_string(), corpus(Tag::Code, 100, 50));
        corpora.insert("text".to_string(), corpus(Tag::Text, 100, 50));
        let spec = MixSpec {
            parts: vec![
                MixPart { corpus: "code".into(), token_budget: 2000 },
                MixPart { corpus: "text".into(), token_budget: 1000 },
            ],
            seed: 4,
        };
        let m = mix(&spec, &corpora).unwrap();
        let h = m.tag_histogram();
        assert!(h[&Tag::Code].abs_diff(2000) <= 50);
        assert!(h[&Tag::Text].abs_diff(1000) <= 50);
        // interleaved, not concatenated
        let first_text = m.documents().iter().position(|d| d.tag == Tag::Text).unwrap();
        assert!(first_text <= 2);
        assert_eq!(m, mix(&spec, &corpora).unwrap());
    }

    #[test]
    fn single_part_mix_is_subsample() {
        let mut corpora = BTreeMap::new();
        let c = corpus(Tag::Code, 30, 20);
        corpora.insert("c".to_string(), c.clone());
        let spec = MixSpec {
            parts: vec![MixPart { corpus: "c".into(), token_budget: 200 }],
            seed: 9,
        };
        let m = mix(&spec, &corpora).unwrap();
        let seed = 9u64.wrapping_add(0x9E37_79B9_7F4A_7C15);
        assert_eq!(m, subsample(&c, 200, seed).unwrap());
    }

    #[test]
    fn jsonl_round_trip() {
        let c = Corpus::new(vec![
            Document::new("hello \"world\"\n", Tag::Text),
            Document::instruction("say hi", "hi"),
        ]);
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let line = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert!(line.contains("\"tag\":\"text\""));
        assert_eq!(Corpus::read_jsonl(buf.as_slice()).unwrap(), c);
    }
}
