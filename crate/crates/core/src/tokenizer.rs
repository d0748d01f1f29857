//! Byte-level tokenizer shared by every draft and target model.
//!
//! Ids `0..256` are raw bytes; special tokens follow. Because the byte range
//! covers every possible input, encoding never fails and decoding is the exact
//! inverse on byte strings.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type TokenId = u32;

pub const BYTE_TOKENS: u32 = 256;
pub const PAD: TokenId = 256;
pub const BOS: TokenId = 257;
pub const EOS: TokenId = 258;
/// Opens an instruction.
pub const INST: TokenId = 259;
/// Separates an instruction from its response.
pub const RESP: TokenId = 260;

const DEFAULT_SPECIALS: [&str; 8] = [
    "<pad>", "<bos>", "<eos>", "<inst>", "<resp>", "<code>", "<text>", "<reserved>",
];

/// Token id map. Two tokenizers are interchangeable iff their maps are equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    #[serde(default = "byte_range")]
    plain_ids: u32,
    specials: Vec<String>,
}

fn byte_range() -> u32 {
    BYTE_TOKENS
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::byte_level()
    }
}

impl Tokenizer {
    /// 256 byte tokens followed by 8 special tokens (vocab 264).
    pub fn byte_level() -> Self {
        Self {
            plain_ids: BYTE_TOKENS,
            specials: DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Byte tokenizer with a custom special-token table appended after the
    /// byte range. The first five entries keep the roles of pad, bos, eos,
    /// inst and resp.
    pub fn with_specials(specials: Vec<String>) -> Self {
        assert!(specials.len() >= 5, "need at least pad/bos/eos/inst/resp");
        Self {
            plain_ids: BYTE_TOKENS,
            specials,
        }
    }

    /// `vocab` plain ids and no special tokens, for synthetic model pairs
    /// that never see text.
    pub fn opaque(vocab: u32) -> Self {
        assert!((1..=BYTE_TOKENS).contains(&vocab), "opaque vocab must be in 1..=256");
        Self {
            plain_ids: vocab,
            specials: Vec::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.plain_ids as usize + self.specials.len()
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id >= self.plain_ids
    }

    pub fn encode(&self, bytes: &[u8]) -> Vec<TokenId> {
        bytes.iter().map(|&b| b as TokenId).collect()
    }

    /// Decodes byte tokens and drops special tokens.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<u8> {
        ids.iter()
            .filter(|&&id| id < self.plain_ids)
            .map(|&id| id as u8)
            .collect()
    }

    pub fn decode_lossy(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode(ids)).into_owned()
    }

    /// Stable digest of the id map.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("bytes:{};", self.plain_ids).as_bytes());
        for (i, s) in self.specials.iter().enumerate() {
            hasher.update(format!("{}={};", self.plain_ids as usize + i, s).as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Lays out an instruction prompt: `<bos> <inst> instruction <resp>`.
pub fn instruction_prompt(instruction: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(instruction.len() + 3);
    out.push(BOS);
    out.push(INST);
    out.extend_from_slice(instruction);
    out.push(RESP);
    out
}

/// Full supervised sequence: prompt, response, `<eos>`.
pub fn instruction_sequence(instruction: &[TokenId], response: &[TokenId]) -> Vec<TokenId> {
    let mut out = instruction_prompt(instruction);
    out.extend_from_slice(response);
    out.push(EOS);
    out
}

/// Per-input-position loss mask for next-token prediction over `tokens`.
///
/// Entry `t` covers the prediction of `tokens[t + 1]`. When the sequence
/// contains a `<resp>` separator only predictions of response tokens (and the
/// closing eos) are supervised; otherwise every position is.
pub fn response_mask(tokens: &[TokenId]) -> Vec<bool> {
    let n = tokens.len().saturating_sub(1);
    let start = tokens.iter().position(|&t| t == RESP).unwrap_or(0);
    (0..n)
        .map(|t| t >= start)
        .collect()
}
