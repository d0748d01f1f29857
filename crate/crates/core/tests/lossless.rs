use draftlab::config::ModelConfig;
use draftlab::decode::generate_autoregressive;
use draftlab::model::{init_model, init_model_with_tokenizer, ModelState};
use draftlab::sampling::softmax;
use draftlab::specdec::{self, SpecSession};
use draftlab::tokenizer::{Tokenizer, BOS};
use draftlab::{SamplingPolicy, SpecConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opaque_model(h: usize, layers: usize, vocab: usize, seed: u64, head_scale: f32) -> ModelState {
    let cfg = ModelConfig {
        vocab_size: vocab,
        max_seq_len: 32,
        ..ModelConfig::tiny(h, layers)
    };
    let mut m = init_model_with_tokenizer(&cfg, Tokenizer::opaque(vocab as u32), seed).unwrap();
    let head = m
        .layout()
        .tensors
        .iter()
        .find(|t| t.name == "lm_head")
        .unwrap()
        .slot
        .range();
    for p in &mut m.params_mut()[head] {
        *p *= head_scale;
    }
    m
}

#[test]
fn greedy_speculation_reproduces_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for pair in 0..3u64 {
        let cfg_t = ModelConfig {
            max_seq_len: 64,
            ..ModelConfig::tiny(16, 2)
        };
        let cfg_d = ModelConfig {
            max_seq_len: 64,
            ..ModelConfig::tiny(8, 1)
        };
        let target = init_model(&cfg_t, 100 + pair).unwrap();
        let draft = init_model(&cfg_d, 200 + pair).unwrap();
        for _ in 0..10 {
            let len = rng.random_range(1..8);
            let mut prompt = vec![BOS];
            prompt.extend((0..len).map(|_| rng.random_range(0..256u32)));
            let spec = SpecConfig {
                stop_at_eos: false,
                ..SpecConfig::new(rng.random_range(1..6), SamplingPolicy::greedy(), 32)
            };
            let (sd, _) = specdec::generate(&draft, &target, &prompt, &spec).unwrap();
            let ar = generate_autoregressive(&target, &prompt, &SamplingPolicy::greedy(), 32, &[], &mut rng).unwrap();
            assert_eq!(sd, ar.tokens);
        }
    }
}

#[test]
fn first_token_follows_target_distribution() {
    let vocab = 32;
    let target = opaque_model(16, 1, vocab, 1, 4.0);
    let draft = opaque_model(16, 1, vocab, 2, 4.0);
    let prompt = [3u32, 7, 1];
    let policy = SamplingPolicy::multinomial(1.0, 0);
    let spec = SpecConfig::new(4, policy, 5);
    let p = softmax(target.forward_full(&prompt).unwrap().last(), 1.0);

    let base = SpecSession::new(&draft, &target, &prompt, 0).unwrap();
    let n = 40_000;
    let mut counts = vec![0usize; vocab];
    for i in 0..n {
        let mut s = base.clone();
        s.reseed(i as u64);
        let block = s.speculate_block(&spec).unwrap();
        counts[block.emitted[0] as usize] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&c, &pi)| (c as f64 / n as f64 - pi).abs())
        .sum::<f64>()
        / 2.0;
    // Sampling noise alone gives E[TV] ≈ ½ Σ sqrt(2 p (1 − p) / (π n)).
    let floor: f64 = p
        .iter()
        .map(|&pi| (2.0 * pi * (1.0 - pi) / (std::f64::consts::PI * n as f64)).sqrt())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 3.0 * floor.max(1e-3), "tv {tv}, noise floor {floor}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn cached_forward_matches_fresh(
        seed in 0u64..10_000,
        tokens in proptest::collection::vec(0u32..264, 2..24),
        cut in 1usize..23,
    ) {
        let cfg = ModelConfig { max_seq_len: 24, ..ModelConfig::tiny(8, 2) };
        let m = init_model(&cfg, seed).unwrap();
        let cut = cut.min(tokens.len() - 1);
        let full = m.forward_full(&tokens).unwrap();
        let mut cache = m.new_cache();
        m.forward(&tokens[..cut], &mut cache).unwrap();
        let tail = m.forward(&tokens[cut..], &mut cache).unwrap();
        for (i, t) in (cut..tokens.len()).enumerate() {
            prop_assert_eq!(tail.row(i), full.row(t));
        }
    }
}
