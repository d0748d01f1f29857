//! Top-k teacher logits and the `SFKD` sparse-logit dataset container.
//!
//! Layout (little-endian): magic `SFKD`, u32 version, u32 k, u32 vocab_size,
//! then one block per sequence until end of file: u32 length, `length` u32
//! token ids, then `length × k` pairs of (u32 id, f32 logit).

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::nn::Network;
use crate::tokenizer::TokenId;

pub const SFKD_MAGIC: &[u8; 4] = b"SFKD";
pub const SFKD_VERSION: u32 = 1;

/// Teacher's `k` largest logits at one position, sorted by descending logit
/// (ties by ascending id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseLogitRecord {
    pub position: u32,
    pub entries: Vec<(TokenId, f32)>,
}

impl SparseLogitRecord {
    /// Exact top-k of a logit row.
    pub fn top_k(position: u32, logits: &[f32], k: usize) -> Self {
        let mut idx: Vec<usize> = (0..logits.len()).collect();
        idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        idx.truncate(k);
        Self {
            position,
            entries: idx.into_iter().map(|i| (i as TokenId, logits[i])).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Contract("sparse record with k = 0".into()));
        }
        let mut seen: Vec<TokenId> = self.entries.iter().map(|e| e.0).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract(format!(
                "duplicate token ids in sparse record at position {}",
                self.position
            )));
        }
        if let Some(&id) = seen.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::Contract(format!("token id {id} outside vocabulary")));
        }
        if self.entries.iter().any(|e| !e.1.is_finite()) {
            return Err(Error::Numeric("sparse record logit".into()));
        }
        Ok(())
    }
}

/// A token sequence with one record per position; record `t` is the teacher's
/// prediction for `tokens[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSequence {
    pub tokens: Vec<TokenId>,
    pub records: Vec<SparseLogitRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    pub k: usize,
    pub vocab_size: usize,
    pub sequences: Vec<SparseSequence>,
}

impl SparseDataset {
    pub fn positions(&self) -> usize {
        self.sequences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        16 + self
            .sequences
            .iter()
            .map(|s| 4 + 4 * s.tokens.len() + 8 * self.k * s.tokens.len())
            .sum::<usize>()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SFKD_MAGIC)?;
        for v in [SFKD_VERSION, self.k as u32, self.vocab_size as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for seq in &self.sequences {
            if seq.records.len() != seq.tokens.len() {
                return Err(Error::Format("one record per position required".into()));
            }
            w.write_all(&(seq.tokens.len() as u32).to_le_bytes())?;
            for &t in &seq.tokens {
                w.write_all(&t.to_le_bytes())?;
            }
            for rec in &seq.records {
                if rec.entries.len() != self.k {
                    return Err(Error::Format(format!(
                        "record with {} entries in a k={} dataset",
                        rec.entries.len(),
                        self.k
                    )));
                }
                for &(id, z) in &rec.entries {
                    w.write_all(&id.to_le_bytes())?;
                    w.write_all(&z.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SFKD_MAGIC {
            return Err(Error::Format("not an SFKD file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SFKD_VERSION {
            return Err(Error::Format(format!("unsupported SFKD version {version}")));
        }
        let k = read_u32(&mut r)? as usize;
        let vocab_size = read_u32(&mut r)? as usize;
        let mut sequences = Vec::new();
        loop {
            let len = match read_u32(&mut r) {
                Ok(n) => n as usize,
                Err(Error::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e),
            };
            let tokens = (0..len).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
            let mut records = Vec::with_capacity(len);
            for pos in 0..len {
                let mut entries = Vec::with_capacity(k);
                for _ in 0..k {
                    let id = read_u32(&mut r)?;
                    let z = f32::from_le_bytes(read_u32(&mut r)?.to_le_bytes());
                    entries.push((id, z));
                }
                records.push(SparseLogitRecord {
                    position: pos as u32,
                    entries,
                });
            }
            sequences.push(SparseSequence { tokens, records });
        }
        Ok(Self {
            k,
            vocab_size,
            sequences,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Runs the teacher over every sequence and keeps the top-`k` logits at
/// each position.
pub fn extract_sparse_logits(
    teacher: &ModelState,
    sequences: &[Vec<TokenId>],
    k: usize,
) -> Result<SparseDataset> {
    let vocab = teacher.vocab_size();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > vocab {
        return Err(Error::InvalidArgument(format!("k {k} exceeds vocab_size {vocab}")));
    }
    let cfg = teacher.config();
    let net = Network::new(cfg, teacher.layout(), teacher.params());
    let mut out = Vec::with_capacity(sequences.len());
    for tokens in sequences {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        if tokens.len() > cfg.max_seq_len {
            return Err(Error::Length {
                requested: tokens.len(),
                max: cfg.max_seq_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::InvalidArgument(format!("token {bad} outside vocabulary of {vocab}")));
        }
        // The batched training kernel reproduces the student's own logits
        // bit for bit, so a model distilled from itself sees zero gradient.
        let tape = net.forward_train(tokens, 1, tokens.len());
        if tape.logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("teacher logits".into()));
        }
        let records = tape
            .logits
            .chunks(vocab)
            .enumerate()
            .map(|(t, row)| SparseLogitRecord::top_k(t as u32, row, k))
            .collect();
        out.push(SparseSequence {
            tokens: tokens.clone(),
            records,
        });
    }
    Ok(SparseDataset {
        k,
        vocab_size: vocab,
        sequences: out,
    })
}
