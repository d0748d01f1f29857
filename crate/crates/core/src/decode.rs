//! Plain autoregressive decoding with a single model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::sampling::{sample, SamplingPolicy};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    /// True when generation stopped on the length budget instead of a stop
    /// token.
    pub truncated: bool,
}

/// Samples up to `max_new_tokens` continuation tokens of `prompt`, stopping
/// after any token in `stop`. The stop token is included in the output.
pub fn generate_autoregressive<R: Rng + ?Sized>(
    model: &ModelState,
    prompt: &[TokenId],
    policy: &SamplingPolicy,
    max_new_tokens: usize,
    stop: &[TokenId],
    rng: &mut R,
) -> Result<Generation> {
    if prompt.is_empty() {
        return Err(Error::InvalidArgument("empty prompt".into()));
    }
    let room = model.config().max_seq_len.saturating_sub(prompt.len());
    let budget = max_new_tokens.min(room);
    let mut cache = model.new_cache();
    let mut logits = model.forward(prompt, &mut cache)?;
    let mut out = Vec::with_capacity(budget);
    for i in 0..budget {
        let tok = sample(logits.last(), policy, rng)?;
        out.push(tok);
        if stop.contains(&tok) {
            return Ok(Generation {
                tokens: out,
                truncated: false,
            });
        }
        if i + 1 < budget {
            logits = model.forward(&[tok], &mut cache)?;
        }
    }
    Ok(Generation {
        tokens: out,
        truncated: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::init_model;
    use crate::tokenizer::BOS;

    #[test]
    fn respects_budget_and_room() {
        let cfg = ModelConfig {
            max_seq_len: 12,
            ..ModelConfig::tiny(8, 1)
        };
        let m = init_model(&cfg, 1).unwrap();
        let pol = SamplingPolicy::greedy();
        let g = generate_autoregressive(&m, &[BOS, 1], &pol, 5, &[], &mut pol.rng()).unwrap();
        assert_eq!(g.tokens.len(), 5);
        assert!(g.truncated);
        let g = generate_autoregressive(&m, &[BOS, 1], &pol, 50, &[], &mut pol.rng()).unwrap();
        assert_eq!(g.tokens.len(), 10);
    }

    #[test]
    fn greedy_matches_full_recompute() {
        let m = init_model(&ModelConfig::tiny(16, 2), 3).unwrap();
        let pol = SamplingPolicy::greedy();
        let prompt = vec![BOS, 40, 41];
        let g = generate_autoregressive(&m, &prompt, &pol, 8, &[], &mut pol.rng()).unwrap();
        let mut seq = prompt.clone();
        for &t in &g.tokens {
            let logits = m.forward_full(&seq).unwrap();
            assert_eq!(crate::sampling::argmax(logits.last()), t);
            seq.push(t);
        }
    }
}
