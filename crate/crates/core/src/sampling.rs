//! Token selection from logit rows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Greedy,
    Multinomial,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::Greedy => "greedy",
            SamplingMode::Multinomial => "multinomial",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(SamplingMode::Greedy),
            "multinomial" => Ok(SamplingMode::Multinomial),
            other => Err(Error::InvalidArgument(format!("unknown sampling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    /// Ignored in greedy mode.
    pub temperature: f32,
    pub seed: u64,
}

impl SamplingPolicy {
    pub fn greedy() -> Self {
        Self {
            mode: SamplingMode::Greedy,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn multinomial(temperature: f32, seed: u64) -> Self {
        Self {
            mode: SamplingMode::Multinomial,
            temperature,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == SamplingMode::Multinomial
            && !(self.temperature.is_finite() && self.temperature > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Probability distribution this policy samples from. Greedy mode yields
    /// the one-hot vector at the argmax.
    pub fn distribution(&self, logits: &[f32]) -> Vec<f64> {
        match self.mode {
            SamplingMode::Greedy => {
                let mut p = vec![0.0; logits.len()];
                p[argmax(logits) as usize] = 1.0;
                p
            }
            SamplingMode::Multinomial => softmax(logits, self.temperature),
        }
    }
}

/// First index of the maximum; ties go to the smallest token id.
pub fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// First index of the maximum of a probability vector.
pub fn argmax_f64(p: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &z) in p.iter().enumerate().skip(1) {
        if z > p[best] {
            best = i;
        }
    }
    best as TokenId
}

/// `softmax(logits / temperature)` evaluated in double precision.
pub fn softmax(logits: &[f32], temperature: f32) -> Vec<f64> {
    let t = temperature as f64;
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z as f64));
    let mut p: Vec<f64> = logits.iter().map(|&z| ((z as f64 - max) / t).exp()).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    p
}

/// Inverse-CDF draw from `p` using a uniform `u` in `[0, 1)`.
///
/// Zero-probability entries are never returned.
pub fn sample_index(p: &[f64], u: f64) -> TokenId {
    let total: f64 = p.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        acc += pi;
        last_nonzero = i;
        if target < acc {
            return i as TokenId;
        }
    }
    last_nonzero as TokenId
}

/// Samples one token from a logit row.
pub fn sample<R: Rng + ?Sized>(logits: &[f32], policy: &SamplingPolicy, rng: &mut R) -> Result<TokenId> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("sampling logits".into()));
    }
    match policy.mode {
        SamplingMode::Greedy => Ok(argmax(logits)),
        SamplingMode::Multinomial => {
            policy.validate()?;
            let p = softmax(logits, policy.temperature);
            Ok(sample_index(&p, rng.random::<f64>()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_tie_break_smallest_id() {
        let mut rng = SamplingPolicy::greedy().rng();
        assert_eq!(sample(&[0.0, 5.0, 5.0], &SamplingPolicy::greedy(), &mut rng).unwrap(), 1);
    }

    #[test]
    fn greedy_ignores_temperature_and_seed() {
        let logits = [0.3, -1.0, 2.5, 2.4];
        for seed in 0..5 {
            let pol = SamplingPolicy {
                mode: SamplingMode::Greedy,
                temperature: seed as f32 + 0.1,
                seed,
            };
            assert_eq!(sample(&logits, &pol, &mut pol.rng()).unwrap(), 2);
        }
    }

    #[test]
    fn dominant_logit_sampled_almost_always() {
        // softmax([0,10,0]/0.6): p1 = 1 / (1 + 2 e^{-16.67}) > 0.9999
        let pol = SamplingPolicy::multinomial(0.6, 42);
        let mut rng = pol.rng();
        let hits = (0..10_000)
            .filter(|_| sample(&[0.0, 10.0, 0.0], &pol, &mut rng).unwrap() == 1)
            .count();
        assert!(hits as f64 / 10_000.0 > 0.99);
    }

    #[test]
    fn low_temperature_matches_greedy() {
        let logits = [0.1, 0.7, -0.3, 0.5, 0.2];
        let pol = SamplingPolicy::multinomial(0.01, 9);
        let mut rng = pol.rng();
        for _ in 0..100 {
            assert_eq!(sample(&logits, &pol, &mut rng).unwrap(), argmax(&logits));
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let logits: Vec<f32> = (0..20).map(|i| (i as f32 * 0.37).sin()).collect();
        let pol = SamplingPolicy::multinomial(1.0, 5);
        let draw = || {
            let mut rng = pol.rng();
            (0..50).map(|_| sample(&logits, &pol, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn non_finite_rejected() {
        let pol = SamplingPolicy::greedy();
        assert!(sample(&[0.0, f32::NAN], &pol, &mut pol.rng()).is_err());
    }

    #[test]
    fn inverse_cdf_skips_zero_mass() {
        let p = [0.0, 0.5, 0.0, 0.5];
        assert_eq!(sample_index(&p, 0.0), 1);
        assert_eq!(sample_index(&p, 0.49), 1);
        assert_eq!(sample_index(&p, 0.5), 3);
        assert_eq!(sample_index(&p, 0.999_999_999), 3);
    }
}
