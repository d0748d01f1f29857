//! Cross-entropy and sparse-support distillation losses over logit matrices.
//!
//! Each function returns the mean loss over supervised rows and
//! `dloss/dlogits` for every row (zero on unsupervised rows).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;
use crate::tokenizer::TokenId;
use crate::train::sparse::SparseLogitRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdKind {
    Kl,
    Tvd,
}

/// Mixture weights over CE, KL and TVD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    #[serde(default)]
    pub ce: f64,
    #[serde(default)]
    pub kl: f64,
    #[serde(default)]
    pub tvd: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::ce()
    }
}

impl LossSpec {
    pub fn ce() -> Self {
        Self { ce: 1.0, kl: 0.0, tvd: 0.0 }
    }

    pub fn kl() -> Self {
        Self { ce: 0.0, kl: 1.0, tvd: 0.0 }
    }

    pub fn tvd() -> Self {
        Self { ce: 0.0, kl: 0.0, tvd: 1.0 }
    }

    pub fn ce_kl() -> Self {
        Self { ce: 0.5, kl: 0.5, tvd: 0.0 }
    }

    pub fn ce_tvd() -> Self {
        Self { ce: 0.5, kl: 0.0, tvd: 0.5 }
    }

    pub fn needs_teacher(&self) -> bool {
        self.kl > 0.0 || self.tvd > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.ce, self.kl, self.tvd];
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument("loss weights must be nonnegative".into()));
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidArgument("at least one loss weight must be positive".into()));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("loss weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Individual terms of a mixture loss, each a mean over supervised rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub kl: f64,
    pub tvd: f64,
}

/// Mean `−log softmax(row)[gold]` over rows with a gold token.
pub fn ce_loss<T: Real>(logits: &[T], vocab: usize, gold: &[Option<TokenId>]) -> (f64, Vec<T>) {
    let rows = logits.len() / vocab;
    assert_eq!(gold.len(), rows);
    let mut grad = vec![T::zero(); logits.len()];
    let count = gold.iter().filter(|g| g.is_some()).count();
    if count == 0 {
        return (0.0, grad);
    }
    let inv = T::one() / T::lit(count as f64);
    let mut total = 0.0f64;
    for (r, g) in gold.iter().enumerate() {
        let Some(g) = *g else { continue };
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().fold(T::neg_infinity(), |m, &z| m.max(z));
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += (lse - row[g as usize]).as_f64();
        let out = &mut grad[r * vocab..(r + 1) * vocab];
        for (o, &z) in out.iter_mut().zip(row) {
            *o = (z - lse).exp() * inv;
        }
        out[g as usize] -= inv;
    }
    (total / count as f64, grad)
}

/// Sparse-support distillation. Both the teacher's top-k logits and the
/// student's logits at the same ids are renormalized by a softmax over the k
/// ids before comparing.
pub fn kd_loss<T: Real>(
    logits: &[T],
    vocab: usize,
    teacher: &[Option<&SparseLogitRecord>],
    kind: KdKind,
) -> Result<(f64, Vec<T>)> {
    let rows = logits.len() / vocab;
    if teacher.len() != rows {
        return Err(Error::Contract(format!(
            "{} teacher records for {rows} logit rows",
            teacher.len()
        )));
    }
    let count = teacher.iter().filter(|t| t.is_some()).count();
    if count == 0 {
        return Err(Error::Contract("empty teacher record list".into()));
    }
    let inv = T::one() / T::lit(count as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    let mut p_t = Vec::new();
    let mut p_s = Vec::new();
    for (r, rec) in teacher.iter().enumerate() {
        let Some(rec) = rec else { continue };
        rec.validate(vocab)?;
        let row = &logits[r * vocab..(r + 1) * vocab];
        let teacher_logits: Vec<T> = rec.entries.iter().map(|e| T::lit(e.1 as f64)).collect();
        softmax_into(&teacher_logits, &mut p_t);
        let student: Vec<T> = rec.entries.iter().map(|e| row[e.0 as usize]).collect();
        softmax_into(&student, &mut p_s);
        let out = &mut grad[r * vocab..(r + 1) * vocab];
        match kind {
            KdKind::Kl => {
                let mut kl = T::zero();
                for (&pt, &ps) in p_t.iter().zip(&p_s) {
                    if pt > T::zero() {
                        kl += pt * (pt.ln() - ps.ln());
                    }
                }
                total += kl.as_f64();
                for (j, e) in rec.entries.iter().enumerate() {
                    out[e.0 as usize] = (p_s[j] - p_t[j]) * inv;
                }
            }
            KdKind::Tvd => {
                let half = T::lit(0.5);
                let mut tvd = T::zero();
                let signs: Vec<T> = p_t
                    .iter()
                    .zip(&p_s)
                    .map(|(&pt, &ps)| {
                        tvd += (pt - ps).abs();
                        sign(ps - pt)
                    })
                    .collect();
                total += (tvd * half).as_f64();
                let mean_sign: T = signs.iter().zip(&p_s).map(|(&s, &p)| s * p).sum();
                for (j, e) in rec.entries.iter().enumerate() {
                    out[e.0 as usize] = half * p_s[j] * (signs[j] - mean_sign) * inv;
                }
            }
        }
    }
    Ok((total / count as f64, grad))
}

/// Weighted mixture `ce·CE + kl·KL + tvd·TVD`. Terms with zero weight are
/// not evaluated.
pub fn mixture_loss<T: Real>(
    logits: &[T],
    vocab: usize,
    gold: &[Option<TokenId>],
    teacher: &[Option<&SparseLogitRecord>],
    spec: &LossSpec,
) -> Result<(LossBreakdown, Vec<T>)> {
    spec.validate()?;
    let mut grad = vec![T::zero(); logits.len()];
    let mut out = LossBreakdown::default();
    let mut add = |w: f64, g: Vec<T>| {
        let w = T::lit(w);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += w * b;
        }
    };
    if spec.ce > 0.0 {
        let (l, g) = ce_loss(logits, vocab, gold);
        out.ce = l;
        add(spec.ce, g);
    }
    if spec.kl > 0.0 {
        let (l, g) = kd_loss(logits, vocab, teacher, KdKind::Kl)?;
        out.kl = l;
        add(spec.kl, g);
    }
    if spec.tvd > 0.0 {
        let (l, g) = kd_loss(logits, vocab, teacher, KdKind::Tvd)?;
        out.tvd = l;
        add(spec.tvd, g);
    }
    out.total = spec.ce * out.ce + spec.kl * out.kl + spec.tvd * out.tvd;
    Ok((out, grad))
}

fn softmax_into<T: Real>(z: &[T], out: &mut Vec<T>) {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    out.clear();
    out.extend(z.iter().map(|&v| (v - max).exp()));
    let sum: T = out.iter().copied().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
