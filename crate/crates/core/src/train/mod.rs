//! Next-token training and distillation of the tiny models.

pub mod gradcheck;
pub mod loss;
pub mod schedule;
pub mod sparse;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Layout, ModelConfig};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::nn::{Network, Real};
use crate::tokenizer::{response_mask, TokenId, PAD};

pub use gradcheck::{check_gradients, GradCheckReport};
pub use loss::{ce_loss, kd_loss, mixture_loss, KdKind, LossBreakdown, LossSpec};
pub use schedule::TrainSchedule;
pub use sparse::{extract_sparse_logits, SparseDataset, SparseLogitRecord, SparseSequence};

/// One supervised sequence. `mask[t]` selects whether the prediction of
/// `tokens[t + 1]` contributes to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<bool>,
    /// Teacher record per input position, when distilling.
    pub teacher: Option<Vec<SparseLogitRecord>>,
}

impl TrainExample {
    /// Every next-token prediction supervised.
    pub fn full(tokens: Vec<TokenId>) -> Self {
        let mask = vec![true; tokens.len().saturating_sub(1)];
        Self {
            tokens,
            mask,
            teacher: None,
        }
    }

    /// Only response tokens supervised when a `<resp>` separator is present.
    pub fn masked(tokens: Vec<TokenId>) -> Self {
        let mask = response_mask(&tokens);
        Self {
            tokens,
            mask,
            teacher: None,
        }
    }

    pub fn from_sparse(seq: &SparseSequence) -> Self {
        let mut ex = Self::masked(seq.tokens.clone());
        ex.teacher = Some(seq.records.clone());
        ex
    }
}

/// Padded mini-batch of `batch × seq` input positions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<TokenId>,
    pub gold: Vec<Option<TokenId>>,
    pub teacher: Vec<Option<SparseLogitRecord>>,
}

impl Batch {
    /// Builds a batch, truncating each example to `max_seq` input positions.
    pub fn from_examples(examples: &[&TrainExample], max_seq: usize) -> Result<Self> {
        let seq = examples
            .iter()
            .map(|e| e.tokens.len().saturating_sub(1))
            .max()
            .unwrap_or(0)
            .min(max_seq);
        if seq == 0 {
            return Err(Error::Data("batch has no trainable positions".into()));
        }
        let b = examples.len();
        let mut tokens = vec![PAD; b * seq];
        let mut gold = vec![None; b * seq];
        let mut teacher = vec![None; b * seq];
        for (i, ex) in examples.iter().enumerate() {
            let n = ex.tokens.len().saturating_sub(1).min(seq);
            for t in 0..n {
                let r = i * seq + t;
                tokens[r] = ex.tokens[t];
                if ex.mask.get(t).copied().unwrap_or(false) {
                    gold[r] = Some(ex.tokens[t + 1]);
                    if let Some(recs) = &ex.teacher {
                        teacher[r] = recs.get(t).cloned();
                    }
                }
            }
        }
        Ok(Self {
            batch: b,
            seq,
            tokens,
            gold,
            teacher,
        })
    }

    pub fn has_teacher(&self) -> bool {
        self.teacher.iter().any(|t| t.is_some())
    }
}

/// Loss and parameter gradients of `params` on `batch`.
pub fn loss_and_grads<T: Real>(
    cfg: &ModelConfig,
    layout: &Layout,
    params: &[T],
    batch: &Batch,
    spec: &LossSpec,
) -> Result<(LossBreakdown, Vec<T>)> {
    let net = Network::new(cfg, layout, params);
    let tape = net.forward_train(&batch.tokens, batch.batch, batch.seq);
    let teacher: Vec<Option<&SparseLogitRecord>> = batch.teacher.iter().map(|t| t.as_ref()).collect();
    let (loss, dlogits) = mixture_loss(&tape.logits, cfg.vocab_size, &batch.gold, &teacher, spec)?;
    let mut grads = vec![T::zero(); layout.total];
    net.backward(&tape, &dlogits, &mut grads);
    Ok((loss, grads))
}

/// Adam with decoupled weight decay, applied to matrices only.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: u32,
    decay_mask: Vec<bool>,
    pub eps: f32,
}

impl Adam {
    pub fn new(state: &ModelState) -> Self {
        let lay = state.layout();
        let mut decay_mask = vec![false; lay.total];
        for t in &lay.tensors {
            if t.shape.len() >= 2 {
                decay_mask[t.slot.range()].fill(true);
            }
        }
        Self {
            m: vec![0.0; lay.total],
            v: vec![0.0; lay.total],
            step: 0,
            decay_mask,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64, sched: &TrainSchedule) {
        self.step += 1;
        let (b1, b2) = (sched.beta1 as f32, sched.beta2 as f32);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let lr = lr as f32;
        let wd = sched.weight_decay as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let decay = if self.decay_mask[i] { wd * params[i] } else { 0.0 };
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + decay);
        }
    }
}

/// Serializable description of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: String,
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub loss: LossSpec,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub state: ModelState,
    pub losses: Vec<f64>,
    pub steps_run: usize,
    /// Set when the data ran out before `total_steps`.
    pub truncated: bool,
}

impl StageOutput {
    /// Mean of the first and last `window` losses.
    pub fn smoothed_ends(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&self.losses[..w]), mean(&self.losses[self.losses.len() - w..]))
    }
}

/// Runs one stage of training starting from `state`.
///
/// Examples are visited in a seeded shuffled order, reshuffled each epoch;
/// step `s` consumes the next `batch_size` of them. If fewer than
/// `total_steps` full batches exist the stage stops early and reports
/// truncation.
pub fn train_stage(
    state: &ModelState,
    examples: &[TrainExample],
    schedule: &TrainSchedule,
    spec: &LossSpec,
    seed: u64,
) -> Result<StageOutput> {
    schedule.validate()?;
    spec.validate()?;
    if spec.needs_teacher() && !examples.iter().any(|e| e.teacher.is_some()) {
        return Err(Error::InvalidArgument(
            "KL/TVD weights require sparse-logit supervision".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::with_capacity(examples.len() * schedule.epochs);
    for _ in 0..schedule.epochs {
        let mut epoch: Vec<usize> = (0..examples.len()).collect();
        epoch.shuffle(&mut rng);
        order.extend(epoch);
    }
    let available = order.len() / schedule.batch_size;
    let steps = schedule.total_steps.min(available);
    let truncated = steps < schedule.total_steps;
    if truncated {
        warn!(
            "training data supports {available} steps of {}; truncating",
            schedule.total_steps
        );
    }

    let mut out = state.clone();
    let mut adam = Adam::new(&out);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let idx = &order[step * schedule.batch_size..(step + 1) * schedule.batch_size];
        let refs: Vec<&TrainExample> = idx.iter().map(|&i| &examples[i]).collect();
        let batch = Batch::from_examples(&refs, schedule.seq_len)?;
        let (loss, grads) = loss_and_grads(out.config(), out.layout(), out.params(), &batch, spec)?;
        if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "loss {} at step {step} of stage",
                loss.total
            )));
        }
        let lr = schedule.lr_at(step + 1)?;
        adam.step(out.params_mut(), &grads, lr, schedule);
        if !out.is_finite() {
            return Err(Error::Numeric(format!("parameters after step {step}")));
        }
        losses.push(loss.total);
    }
    Ok(StageOutput {
        state: out,
        losses,
        steps_run: steps,
        truncated,
    })
}

/// Packs documents into `<bos> doc <eos>` runs and cuts the stream into
/// windows of `seq_len + 1` tokens starting every `seq_len` tokens, so each
/// next-token prediction in the stream appears exactly once.
pub fn pack_documents(docs: &[Vec<TokenId>], seq_len: usize) -> Vec<TrainExample> {
    use crate::tokenizer::{BOS, EOS};
    let mut stream = Vec::new();
    for d in docs {
        stream.push(BOS);
        stream.extend_from_slice(d);
        stream.push(EOS);
    }
    (0..stream.len().saturating_sub(1))
        .step_by(seq_len)
        .map(|s| TrainExample::full(stream[s..(s + seq_len + 1).min(stream.len())].to_vec()))
        .collect()
}

/// Mean next-token cross-entropy over the supervised positions.
pub fn evaluate_ce(state: &ModelState, examples: &[TrainExample], seq_len: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let batch = Batch::from_examples(&[ex], seq_len)?;
        let net = Network::new(state.config(), state.layout(), state.params());
        let tape = net.forward_train(&batch.tokens, 1, batch.seq);
        let n = batch.gold.iter().filter(|g| g.is_some()).count();
        if n == 0 {
            continue;
        }
        let (l, _) = ce_loss(&tape.logits, state.vocab_size(), &batch.gold);
        total += l * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::Data("no supervised positions to evaluate".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn tiny() -> ModelConfig {
        ModelConfig {
            max_seq_len: 32,
            ..ModelConfig::tiny(8, 1)
        }
    }

    #[test]
    fn zero_lr_zero_decay_is_identity() {
        let state = init_model(&tiny(), 3).unwrap();
        let ex = vec![TrainExample::full(vec![257, 1, 2, 3, 4, 258]); 2];
        let sched = TrainSchedule {
            peak_lr: 0.0,
            weight_decay: 0.0,
            total_steps: 3,
            batch_size: 2,
            seq_len: 8,
            epochs: 3,
            ..TrainSchedule::default()
        };
        let out = train_stage(&state, &ex, &sched, &LossSpec::ce(), 1).unwrap();
        assert_eq!(out.steps_run, 3);
        assert_eq!(out.state, state);
    }

    #[test]
    fn truncates_when_data_runs_out() {
        let state = init_model(&tiny(), 3).unwrap();
        let ex = vec![TrainExample::full(vec![257, 1, 2, 258]); 5];
        let sched = TrainSchedule {
            total_steps: 10,
            batch_size: 2,
            seq_len: 8,
            ..TrainSchedule::default()
        };
        let out = train_stage(&state, &ex, &sched, &LossSpec::ce(), 1).unwrap();
        assert!(out.truncated);
        assert_eq!(out.steps_run, 2);
    }

    #[test]
    fn kd_without_teacher_rejected() {
        let state = init_model(&tiny(), 3).unwrap();
        let ex = vec![TrainExample::full(vec![257, 1, 2, 258]); 4];
        let sched = TrainSchedule {
            total_steps: 1,
            batch_size: 2,
            seq_len: 8,
            ..TrainSchedule::default()
        };
        assert!(train_stage(&state, &ex, &sched, &LossSpec::kl(), 1).is_err());
    }

    #[test]
    fn packing_windows() {
        let docs = vec![vec![1, 2, 3], vec![4, 5]];
        // stream: bos 1 2 3 eos bos 4 5 eos  (9 tokens)
        let ex = pack_documents(&docs, 3);
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[0].tokens, vec![257, 1, 2, 3]);
        assert_eq!(ex[1].tokens, vec![3, 258, 257, 4]);
        assert_eq!(ex[2].tokens, vec![4, 5, 258]);
        assert_eq!(ex[2].mask, vec![true, true]);
    }

    #[test]
    fn batch_padding_is_masked() {
        let a = TrainExample::full(vec![257, 1, 2, 3]);
        let b = TrainExample::full(vec![257, 9]);
        let batch = Batch::from_examples(&[&a, &b], 16).unwrap();
        assert_eq!(batch.seq, 3);
        assert_eq!(batch.tokens[3..], [257, PAD, PAD]);
        assert_eq!(batch.gold[3..], [Some(9), None, None]);
    }
}
