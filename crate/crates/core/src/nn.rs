//! Batched training forward pass and its hand-written backward pass.
//!
//! Everything here is generic over the scalar so the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::config::{Layout, ModelConfig, Slot};
use crate::model::{Rope, RMS_EPS};
use crate::tokenizer::TokenId;

pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Send + Sync + 'static
{
    /// Raw strided GEMM `C = alpha·A·B + beta·C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from(x).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `C[m×n] (+)= op(A)[m×k] · op(B)[k×n]` over row-major buffers. With `ta`
/// the buffer `a` holds `A` transposed (`k×m`); likewise `tb` for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    // SAFETY: lengths asserted above match the strides chosen.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct LayerTape<T> {
    x_in: Vec<T>,
    xn: Vec<T>,
    rinv: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    xn2: Vec<T>,
    rinv2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
}

/// Activations recorded by [`Network::forward_train`].
pub struct Tape<T> {
    batch: usize,
    seq: usize,
    tokens: Vec<TokenId>,
    layers: Vec<LayerTape<T>>,
    x_final: Vec<T>,
    xf: Vec<T>,
    rinv_f: Vec<T>,
    pub logits: Vec<T>,
}

impl<T> Tape<T> {
    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }
}

/// Borrowed view of a parameter buffer in any precision.
pub struct Network<'a, T> {
    cfg: &'a ModelConfig,
    layout: &'a Layout,
    params: &'a [T],
    rope_cos: Vec<T>,
    rope_sin: Vec<T>,
}

impl<'a, T: Real> Network<'a, T> {
    pub fn new(cfg: &'a ModelConfig, layout: &'a Layout, params: &'a [T]) -> Self {
        assert_eq!(params.len(), layout.total);
        let rope = Rope::new(cfg);
        let half = cfg.head_dim() / 2;
        let mut rope_cos = Vec::with_capacity(cfg.max_seq_len * half);
        let mut rope_sin = Vec::with_capacity(cfg.max_seq_len * half);
        for pos in 0..cfg.max_seq_len {
            for i in 0..half {
                let (c, s) = rope.cos_sin(pos, i);
                rope_cos.push(T::lit(c));
                rope_sin.push(T::lit(s));
            }
        }
        Self {
            cfg,
            layout,
            params,
            rope_cos,
            rope_sin,
        }
    }

    fn w(&self, slot: Slot) -> &[T] {
        &self.params[slot.range()]
    }

    /// Full causal forward over `batch` sequences of `seq` tokens, laid out
    /// row-major in `tokens`.
    pub fn forward_train(&self, tokens: &[TokenId], batch: usize, seq: usize) -> Tape<T> {
        let cfg = self.cfg;
        assert_eq!(tokens.len(), batch * seq);
        assert!(seq <= cfg.max_seq_len, "sequence longer than max_seq_len");
        let n = batch * seq;
        let h = cfg.hidden_size;
        let kv = cfg.kv_dim();
        let inter = cfg.intermediate_size;
        let lay = self.layout;

        let mut x = vec![T::zero(); n * h];
        let embed = self.w(lay.embed);
        for (r, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            x[r * h..(r + 1) * h].copy_from_slice(&embed[t * h..(t + 1) * h]);
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for ls in &lay.layers {
            let x_in = x.clone();
            let (xn, rinv) = rms_norm(&x, self.w(ls.attn_norm), h);
            let mut q = vec![T::zero(); n * h];
            let mut k = vec![T::zero(); n * kv];
            let mut v = vec![T::zero(); n * kv];
            gemm(n, h, h, &xn, false, self.w(ls.wq), false, &mut q, false);
            gemm(n, h, kv, &xn, false, self.w(ls.wk), false, &mut k, false);
            gemm(n, h, kv, &xn, false, self.w(ls.wv), false, &mut v, false);
            self.rope(&mut q, cfg.n_heads, seq, false);
            self.rope(&mut k, cfg.n_kv_heads, seq, false);
            let (attn, probs) = self.attention(&q, &k, &v, batch, seq);
            gemm(n, h, h, &attn, false, self.w(ls.wo), false, &mut x, true);

            let (xn2, rinv2) = rms_norm(&x, self.w(ls.mlp_norm), h);
            let mut gate = vec![T::zero(); n * inter];
            let mut up = vec![T::zero(); n * inter];
            gemm(n, h, inter, &xn2, false, self.w(ls.w_gate), false, &mut gate, false);
            gemm(n, h, inter, &xn2, false, self.w(ls.w_up), false, &mut up, false);
            let act: Vec<T> = gate.iter().zip(&up).map(|(&a, &u)| silu(a) * u).collect();
            gemm(n, inter, h, &act, false, self.w(ls.w_down), false, &mut x, true);

            layers.push(LayerTape {
                x_in,
                xn,
                rinv,
                q,
                k,
                v,
                probs,
                attn,
                xn2,
                rinv2,
                gate,
                up,
                act,
            });
        }

        let (xf, rinv_f) = rms_norm(&x, self.w(lay.final_norm), h);
        let vocab = cfg.vocab_size;
        let mut logits = vec![T::zero(); n * vocab];
        match lay.head {
            Some(slot) => gemm(n, h, vocab, &xf, false, self.w(slot), false, &mut logits, false),
            None => gemm(n, h, vocab, &xf, false, embed, true, &mut logits, false),
        }
        Tape {
            batch,
            seq,
            tokens: tokens.to_vec(),
            layers,
            x_final: x,
            xf,
            rinv_f,
            logits,
        }
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/dlogits`.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &[T], grads: &mut [T]) {
        let cfg = self.cfg;
        let lay = self.layout;
        let n = tape.rows();
        let h = cfg.hidden_size;
        let kv = cfg.kv_dim();
        let inter = cfg.intermediate_size;
        let vocab = cfg.vocab_size;
        assert_eq!(dlogits.len(), n * vocab);
        assert_eq!(grads.len(), lay.total);

        let mut dxf = vec![T::zero(); n * h];
        match lay.head {
            Some(slot) => {
                gemm(h, n, vocab, &tape.xf, true, dlogits, false, &mut grads[slot.range()], true);
                gemm(n, vocab, h, dlogits, false, self.w(slot), true, &mut dxf, false);
            }
            None => {
                gemm(vocab, n, h, dlogits, true, &tape.xf, false, &mut grads[lay.embed.range()], true);
                gemm(n, vocab, h, dlogits, false, self.w(lay.embed), false, &mut dxf, false);
            }
        }
        let mut dx = vec![T::zero(); n * h];
        rms_norm_backward(
            &tape.x_final,
            self.w(lay.final_norm),
            &tape.rinv_f,
            &dxf,
            h,
            &mut dx,
            &mut grads[lay.final_norm.range()],
        );

        for (ls, lt) in lay.layers.iter().zip(&tape.layers).rev() {
            // MLP: x_out = x_mid + act · W_down
            let mut dact = vec![T::zero(); n * inter];
            gemm(inter, n, h, &lt.act, true, &dx, false, &mut grads[ls.w_down.range()], true);
            gemm(n, h, inter, &dx, false, self.w(ls.w_down), true, &mut dact, false);
            let mut dgate = vec![T::zero(); n * inter];
            let mut dup = vec![T::zero(); n * inter];
            for i in 0..n * inter {
                let (a, u, d) = (lt.gate[i], lt.up[i], dact[i]);
                dup[i] = d * silu(a);
                dgate[i] = d * u * silu_grad(a);
            }
            gemm(h, n, inter, &lt.xn2, true, &dgate, false, &mut grads[ls.w_gate.range()], true);
            gemm(h, n, inter, &lt.xn2, true, &dup, false, &mut grads[ls.w_up.range()], true);
            let mut dxn2 = vec![T::zero(); n * h];
            gemm(n, inter, h, &dgate, false, self.w(ls.w_gate), true, &mut dxn2, false);
            gemm(n, inter, h, &dup, false, self.w(ls.w_up), true, &mut dxn2, true);
            // x_mid is x_in + attn·W_o; recompute rather than store.
            let mut x_mid = lt.x_in.clone();
            gemm(n, h, h, &lt.attn, false, self.w(ls.wo), false, &mut x_mid, true);
            rms_norm_backward(
                &x_mid,
                self.w(ls.mlp_norm),
                &lt.rinv2,
                &dxn2,
                h,
                &mut dx,
                &mut grads[ls.mlp_norm.range()],
            );

            // Attention: x_mid = x_in + attn · W_o
            let mut dattn = vec![T::zero(); n * h];
            gemm(h, n, h, &lt.attn, true, &dx, false, &mut grads[ls.wo.range()], true);
            gemm(n, h, h, &dx, false, self.w(ls.wo), true, &mut dattn, false);
            let (mut dq, mut dk, dv) =
                self.attention_backward(lt, &dattn, tape.batch, tape.seq);
            self.rope(&mut dq, cfg.n_heads, tape.seq, true);
            self.rope(&mut dk, cfg.n_kv_heads, tape.seq, true);
            gemm(h, n, h, &lt.xn, true, &dq, false, &mut grads[ls.wq.range()], true);
            gemm(h, n, kv, &lt.xn, true, &dk, false, &mut grads[ls.wk.range()], true);
            gemm(h, n, kv, &lt.xn, true, &dv, false, &mut grads[ls.wv.range()], true);
            let mut dxn = vec![T::zero(); n * h];
            gemm(n, h, h, &dq, false, self.w(ls.wq), true, &mut dxn, false);
            gemm(n, kv, h, &dk, false, self.w(ls.wk), true, &mut dxn, true);
            gemm(n, kv, h, &dv, false, self.w(ls.wv), true, &mut dxn, true);
            rms_norm_backward(
                &lt.x_in,
                self.w(ls.attn_norm),
                &lt.rinv,
                &dxn,
                h,
                &mut dx,
                &mut grads[ls.attn_norm.range()],
            );
        }

        let dembed = &mut grads[lay.embed.range()];
        for (r, &t) in tape.tokens.iter().enumerate() {
            let t = t as usize;
            for (g, &d) in dembed[t * h..(t + 1) * h].iter_mut().zip(&dx[r * h..(r + 1) * h]) {
                *g += d;
            }
        }
    }

    /// Rotates every head in place; `inverse` applies the transpose.
    fn rope(&self, x: &mut [T], heads: usize, seq: usize, inverse: bool) {
        let d = self.cfg.head_dim();
        let half = d / 2;
        let width = heads * d;
        for (r, row) in x.chunks_mut(width).enumerate() {
            let pos = r % seq;
            let cos = &self.rope_cos[pos * half..(pos + 1) * half];
            let sin = &self.rope_sin[pos * half..(pos + 1) * half];
            for head in row.chunks_mut(d) {
                for i in 0..half {
                    let (c, s) = (cos[i], if inverse { -sin[i] } else { sin[i] });
                    let (a, b) = (head[i], head[i + half]);
                    head[i] = a * c - b * s;
                    head[i + half] = a * s + b * c;
                }
            }
        }
    }

    fn attention(&self, q: &[T], k: &[T], v: &[T], batch: usize, seq: usize) -> (Vec<T>, Vec<T>) {
        let cfg = self.cfg;
        let h = cfg.hidden_size;
        let d = cfg.head_dim();
        let kv = cfg.kv_dim();
        let heads = cfg.n_heads;
        let group = heads / cfg.n_kv_heads;
        let scale = T::one() / T::lit(d as f64).sqrt();
        let mut out = vec![T::zero(); batch * seq * h];
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        for b in 0..batch {
            for hd in 0..heads {
                let g = hd / group;
                let pbase = (b * heads + hd) * seq * seq;
                for i in 0..seq {
                    let r = b * seq + i;
                    let qi = &q[r * h + hd * d..r * h + (hd + 1) * d];
                    let prow = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                    let mut max = T::neg_infinity();
                    for j in 0..=i {
                        let rj = b * seq + j;
                        let kj = &k[rj * kv + g * d..rj * kv + (g + 1) * d];
                        let s = dot(qi, kj) * scale;
                        prow[j] = s;
                        max = max.max(s);
                    }
                    let mut sum = T::zero();
                    for p in &mut prow[..=i] {
                        *p = (*p - max).exp();
                        sum += *p;
                    }
                    let oi = &mut out[r * h + hd * d..r * h + (hd + 1) * d];
                    for j in 0..=i {
                        prow[j] /= sum;
                        let rj = b * seq + j;
                        let vj = &v[rj * kv + g * d..rj * kv + (g + 1) * d];
                        for (o, &vv) in oi.iter_mut().zip(vj) {
                            *o += prow[j] * vv;
                        }
                    }
                }
            }
        }
        (out, probs)
    }

    fn attention_backward(
        &self,
        lt: &LayerTape<T>,
        dout: &[T],
        batch: usize,
        seq: usize,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let cfg = self.cfg;
        let h = cfg.hidden_size;
        let d = cfg.head_dim();
        let kv = cfg.kv_dim();
        let heads = cfg.n_heads;
        let group = heads / cfg.n_kv_heads;
        let scale = T::one() / T::lit(d as f64).sqrt();
        let n = batch * seq;
        let mut dq = vec![T::zero(); n * h];
        let mut dk = vec![T::zero(); n * kv];
        let mut dv = vec![T::zero(); n * kv];
        let mut dp = vec![T::zero(); seq];
        for b in 0..batch {
            for hd in 0..heads {
                let g = hd / group;
                let pbase = (b * heads + hd) * seq * seq;
                for i in 0..seq {
                    let r = b * seq + i;
                    let doi = &dout[r * h + hd * d..r * h + (hd + 1) * d];
                    let prow = &lt.probs[pbase + i * seq..pbase + (i + 1) * seq];
                    let mut weighted = T::zero();
                    for j in 0..=i {
                        let rj = b * seq + j;
                        let vj = &lt.v[rj * kv + g * d..rj * kv + (g + 1) * d];
                        dp[j] = dot(doi, vj);
                        weighted += prow[j] * dp[j];
                        let dvj = &mut dv[rj * kv + g * d..rj * kv + (g + 1) * d];
                        for (acc, &o) in dvj.iter_mut().zip(doi) {
                            *acc += prow[j] * o;
                        }
                    }
                    let qi = &lt.q[r * h + hd * d..r * h + (hd + 1) * d];
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        let rj = b * seq + j;
                        let kj = &lt.k[rj * kv + g * d..rj * kv + (g + 1) * d];
                        let dqi = &mut dq[r * h + hd * d..r * h + (hd + 1) * d];
                        for (acc, &kk) in dqi.iter_mut().zip(kj) {
                            *acc += ds * kk;
                        }
                        let dkj = &mut dk[rj * kv + g * d..rj * kv + (g + 1) * d];
                        for (acc, &qq) in dkj.iter_mut().zip(qi) {
                            *acc += ds * qq;
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

fn rms_norm<T: Real>(x: &[T], gain: &[T], h: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / h;
    let mut out = vec![T::zero(); x.len()];
    let mut rinv = Vec::with_capacity(rows);
    let hf = T::lit(h as f64);
    let eps = T::lit(RMS_EPS as f64);
    for r in 0..rows {
        let xr = &x[r * h..(r + 1) * h];
        let ms = xr.iter().map(|&v| v * v).sum::<T>() / hf;
        let ri = T::one() / (ms + eps).sqrt();
        rinv.push(ri);
        for ((o, &v), &g) in out[r * h..(r + 1) * h].iter_mut().zip(xr).zip(gain) {
            *o = v * ri * g;
        }
    }
    (out, rinv)
}

fn rms_norm_backward<T: Real>(
    x: &[T],
    gain: &[T],
    rinv: &[T],
    dy: &[T],
    h: usize,
    dx: &mut [T],
    dgain: &mut [T],
) {
    let hf = T::lit(h as f64);
    for (r, &ri) in rinv.iter().enumerate() {
        let xr = &x[r * h..(r + 1) * h];
        let dyr = &dy[r * h..(r + 1) * h];
        let mut s = T::zero();
        for i in 0..h {
            s += gain[i] * dyr[i] * xr[i];
            dgain[i] += dyr[i] * xr[i] * ri;
        }
        let coef = ri * ri * ri * s / hf;
        for i in 0..h {
            dx[r * h + i] += ri * gain[i] * dyr[i] - coef * xr[i];
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}
