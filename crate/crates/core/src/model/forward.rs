//! Transformer forward pass with an activation trace, and the matching
//! reverse pass.

use crate::data::ObservationSeq;
use crate::error::{Error, Result};
use crate::model::config::{gelu, gelu_grad};
use crate::model::kernels::{add_bias, bias_grad, gemm, layer_norm, layer_norm_backward, LnCache};
use crate::model::params::{LinearSlots, ModelWeights, Trainable};

/// `y = x W + b + s (x A) B` for `n` rows. Returns `x A` (empty without an
/// adapter).
pub(crate) fn linear_forward(w: &ModelWeights, lin: &LinearSlots, x: &[f64], n: usize, out: &mut [f64]) -> Vec<f64> {
    gemm(n, lin.d_in, lin.d_out, 1.0, x, false, w.tensor(lin.w), false, 0.0, out);
    if let Some(b) = lin.b {
        add_bias(&mut out[..n * lin.d_out], w.tensor(b));
    }
    match lin.adapter {
        Some(pair) => {
            let r = w.config.lora_rank;
            let mut xa = vec![0.0; n * r];
            gemm(n, lin.d_in, r, 1.0, x, false, w.tensor(pair.a), false, 0.0, &mut xa);
            gemm(n, r, lin.d_out, w.config.lora_scale(), &xa, false, w.tensor(pair.b), false, 1.0, out);
            xa
        }
        None => Vec::new(),
    }
}

/// Reverse of [`linear_forward`]: accumulates parameter gradients for the
/// trainable groups and, when `dx` is given, adds the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    w: &ModelWeights,
    lin: &LinearSlots,
    x: &[f64],
    xa: &[f64],
    dy: &[f64],
    n: usize,
    dx: Option<&mut [f64]>,
    grads: &mut [f64],
    trainable: &Trainable,
) {
    let layout = &w.layout;
    let wslot = layout.slot(lin.w);
    if trainable.contains(wslot.group) {
        gemm(lin.d_in, n, lin.d_out, 1.0, x, true, dy, false, 1.0, &mut grads[wslot.range()]);
        if let Some(b) = lin.b {
            bias_grad(&dy[..n * lin.d_out], &mut grads[layout.slot(b).range()]);
        }
    }
    let mut dx = dx;
    if let Some(pair) = lin.adapter {
        let r = w.config.lora_rank;
        let s = w.config.lora_scale();
        let train_adapter = trainable.contains(layout.slot(pair.a).group);
        if train_adapter || dx.is_some() {
            let mut t = vec![0.0; n * r];
            gemm(n, lin.d_out, r, 1.0, dy, false, w.tensor(pair.b), true, 0.0, &mut t);
            if train_adapter {
                gemm(lin.d_in, n, r, s, x, true, &t, false, 1.0, &mut grads[layout.slot(pair.a).range()]);
                gemm(r, n, lin.d_out, s, xa, true, dy, false, 1.0, &mut grads[layout.slot(pair.b).range()]);
            }
            if let Some(dx) = dx.as_deref_mut() {
                gemm(n, r, lin.d_in, s, &t, false, w.tensor(pair.a), true, 1.0, dx);
            }
        }
    }
    if let Some(dx) = dx {
        gemm(n, lin.d_out, lin.d_in, 1.0, dy, false, w.tensor(lin.w), true, 1.0, dx);
    }
}

#[derive(Clone, Debug, Default)]
struct LayerTrace {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    qa: Vec<f64>,
    ka: Vec<f64>,
    va: Vec<f64>,
    /// `heads x n x n` attention probabilities, zero where masked.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    oa: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    u: Vec<f64>,
    ua: Vec<f64>,
    f: Vec<f64>,
    fa: Vec<f64>,
}

/// Activations of one forward pass over `prefix` observation positions
/// followed by the token positions.
#[derive(Clone, Debug)]
pub struct Trace {
    pub prefix: usize,
    pub n: usize,
    tokens: Vec<u32>,
    obs: Vec<f64>,
    layers: Vec<LayerTrace>,
    lnf: LnCache,
    /// Final normalized states for all `n` positions, `n x d_model`.
    pub hidden: Vec<f64>,
}

impl Trace {
    pub fn token_count(&self) -> usize {
        self.n - self.prefix
    }

    /// Hidden states of the token positions only.
    pub fn token_hidden(&self, d: usize) -> &[f64] {
        &self.hidden[self.prefix * d..]
    }
}

/// Whether position `i` may attend to position `j`: the observation prefix
/// is visible to everyone, tokens are causal.
pub fn attends(prefix: usize, i: usize, j: usize) -> bool {
    j < prefix || j <= i
}

fn check_inputs(w: &ModelWeights, obs: Option<&ObservationSeq>, tokens: &[u32]) -> Result<usize> {
    let cfg = &w.config;
    let prefix = match obs {
        Some(o) => {
            if o.d_obs != cfg.d_obs {
                return Err(Error::SizeMismatch(format!(
                    "observation width {} but model expects {}",
                    o.d_obs, cfg.d_obs
                )));
            }
            o.len()
        }
        None => 0,
    };
    let len = prefix + tokens.len();
    if len > cfg.max_seq {
        return Err(Error::SequenceTooLong { len, max: cfg.max_seq });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::VocabMismatch(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(prefix)
}

pub fn forward_trace(w: &ModelWeights, obs: Option<&ObservationSeq>, tokens: &[u32]) -> Result<Trace> {
    let prefix = check_inputs(w, obs, tokens)?;
    let cfg = &w.config;
    let l = &w.layout;
    let d = cfg.d_model;
    let n = prefix + tokens.len();
    let obs_values = obs.map(|o| o.vectors.clone()).unwrap_or_default();

    let mut x = vec![0.0; n * d];
    if prefix > 0 {
        gemm(prefix, cfg.d_obs, d, 1.0, &obs_values, false, w.tensor(l.obs_w), false, 0.0, &mut x);
        add_bias(&mut x[..prefix * d], w.tensor(l.obs_b));
    }
    let tok_emb = w.tensor(l.tok_emb);
    for (t, &id) in tokens.iter().enumerate() {
        let row = &tok_emb[id as usize * d..(id as usize + 1) * d];
        x[(prefix + t) * d..(prefix + t + 1) * d].copy_from_slice(row);
    }
    let pos = w.tensor(l.pos_emb);
    for (v, p) in x.iter_mut().zip(&pos[..n * d]) {
        *v += p;
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for slots in &l.layers {
        let mut lt = LayerTrace {
            h1: vec![0.0; n * d],
            q: vec![0.0; n * d],
            k: vec![0.0; n * d],
            v: vec![0.0; n * d],
            ..LayerTrace::default()
        };
        lt.ln1 = layer_norm(&x, w.tensor(slots.ln1_g), w.tensor(slots.ln1_b), &mut lt.h1);
        lt.qa = linear_forward(w, &slots.q, &lt.h1, n, &mut lt.q);
        lt.ka = linear_forward(w, &slots.k, &lt.h1, n, &mut lt.k);
        lt.va = linear_forward(w, &slots.v, &lt.h1, n, &mut lt.v);
        let (probs, ctx) = attention(cfg.n_heads, d, n, prefix, &lt.q, &lt.k, &lt.v);
        lt.probs = probs;
        lt.ctx = ctx;
        let mut o = vec![0.0; n * d];
        lt.oa = linear_forward(w, &slots.o, &lt.ctx, n, &mut o);
        for (a, b) in x.iter_mut().zip(&o) {
            *a += b;
        }

        lt.h2 = vec![0.0; n * d];
        lt.ln2 = layer_norm(&x, w.tensor(slots.ln2_g), w.tensor(slots.ln2_b), &mut lt.h2);
        lt.u = vec![0.0; n * cfg.d_ff];
        lt.ua = linear_forward(w, &slots.ff1, &lt.h2, n, &mut lt.u);
        lt.f = lt.u.iter().map(|&v| gelu(v)).collect();
        let mut y = vec![0.0; n * d];
        lt.fa = linear_forward(w, &slots.ff2, &lt.f, n, &mut y);
        for (a, b) in x.iter_mut().zip(&y) {
            *a += b;
        }
        layers.push(lt);
    }

    let mut hidden = vec![0.0; n * d];
    let lnf = layer_norm(&x, w.tensor(l.lnf_g), w.tensor(l.lnf_b), &mut hidden);
    Ok(Trace {
        prefix,
        n,
        tokens: tokens.to_vec(),
        obs: obs_values,
        layers,
        lnf,
        hidden,
    })
}

fn head_slice(src: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for i in 0..n {
        out.extend_from_slice(&src[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}

fn attention(heads: usize, d: usize, n: usize, prefix: usize, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * n * n];
    let mut ctx = vec![0.0; n * d];
    let mut ch = vec![0.0; n * dh];
    for h in 0..heads {
        let qh = head_slice(q, n, d, h, dh);
        let kh = head_slice(k, n, d, h, dh);
        let vh = head_slice(v, n, d, h, dh);
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        gemm(n, dh, n, scale, &qh, false, &kh, true, 0.0, p);
        for i in 0..n {
            let row = &mut p[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter().enumerate() {
                if attends(prefix, i, j) {
                    max = max.max(*s);
                }
            }
            let mut sum = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                if attends(prefix, i, j) {
                    *s = (*s - max).exp();
                    sum += *s;
                } else {
                    *s = 0.0;
                }
            }
            for s in row.iter_mut() {
                *s /= sum;
            }
        }
        gemm(n, n, dh, 1.0, p, false, &vh, false, 0.0, &mut ch);
        for i in 0..n {
            ctx[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&ch[i * dh..(i + 1) * dh]);
        }
    }
    (probs, ctx)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    heads: usize,
    d: usize,
    n: usize,
    lt: &LayerTrace,
    dctx: &[f64],
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; n * n];
    let mut dqh = vec![0.0; n * dh];
    let mut dkh = vec![0.0; n * dh];
    let mut dvh = vec![0.0; n * dh];
    for h in 0..heads {
        let qh = head_slice(&lt.q, n, d, h, dh);
        let kh = head_slice(&lt.k, n, d, h, dh);
        let vh = head_slice(&lt.v, n, d, h, dh);
        let dch = head_slice(dctx, n, d, h, dh);
        let p = &lt.probs[h * n * n..(h + 1) * n * n];
        gemm(n, dh, n, 1.0, &dch, false, &vh, true, 0.0, &mut dp);
        gemm(n, n, dh, 1.0, p, true, &dch, false, 0.0, &mut dvh);
        for i in 0..n {
            let pr = &p[i * n..(i + 1) * n];
            let dr = &mut dp[i * n..(i + 1) * n];
            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for (g, &pv) in dr.iter_mut().zip(pr) {
                *g = pv * (*g - dot);
            }
        }
        gemm(n, n, dh, scale, &dp, false, &kh, false, 0.0, &mut dqh);
        gemm(n, n, dh, scale, &dp, true, &qh, false, 0.0, &mut dkh);
        for i in 0..n {
            let r = i * d + h * dh..i * d + (h + 1) * dh;
            let s = i * dh..(i + 1) * dh;
            dq[r.clone()].copy_from_slice(&dqh[s.clone()]);
            dk[r.clone()].copy_from_slice(&dkh[s.clone()]);
            dv[r].copy_from_slice(&dvh[s]);
        }
    }
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to the final hidden states (all `n` positions) is `d_hidden`.
pub fn backward(w: &ModelWeights, trace: &Trace, d_hidden: &[f64], grads: &mut [f64], trainable: &Trainable) {
    let cfg = &w.config;
    let l = &w.layout;
    let d = cfg.d_model;
    let n = trace.n;
    let group_of = |slot: usize| l.slot(slot).group;

    let mut dx = vec![0.0; n * d];
    {
        let params = trainable.contains(group_of(l.lnf_g));
        let (gr, gb) = split_pair(grads, l.slot(l.lnf_g).range(), l.slot(l.lnf_b).range());
        layer_norm_backward(&trace.lnf, w.tensor(l.lnf_g), d_hidden, &mut dx, params.then_some((gr, gb)));
    }

    for (slots, lt) in l.layers.iter().zip(&trace.layers).rev() {
        let params = trainable.contains(group_of(slots.ln2_g));

        let mut df = vec![0.0; n * cfg.d_ff];
        linear_backward(w, &slots.ff2, &lt.f, &lt.fa, &dx, n, Some(&mut df), grads, trainable);
        for (g, &u) in df.iter_mut().zip(&lt.u) {
            *g *= gelu_grad(u);
        }
        let mut dh2 = vec![0.0; n * d];
        linear_backward(w, &slots.ff1, &lt.h2, &lt.ua, &df, n, Some(&mut dh2), grads, trainable);
        {
            let (gr, gb) = split_pair(grads, l.slot(slots.ln2_g).range(), l.slot(slots.ln2_b).range());
            layer_norm_backward(&lt.ln2, w.tensor(slots.ln2_g), &dh2, &mut dx, params.then_some((gr, gb)));
        }

        let mut dctx = vec![0.0; n * d];
        linear_backward(w, &slots.o, &lt.ctx, &lt.oa, &dx, n, Some(&mut dctx), grads, trainable);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        attention_backward(cfg.n_heads, d, n, lt, &dctx, &mut dq, &mut dk, &mut dv);
        let mut dh1 = vec![0.0; n * d];
        linear_backward(w, &slots.q, &lt.h1, &lt.qa, &dq, n, Some(&mut dh1), grads, trainable);
        linear_backward(w, &slots.k, &lt.h1, &lt.ka, &dk, n, Some(&mut dh1), grads, trainable);
        linear_backward(w, &slots.v, &lt.h1, &lt.va, &dv, n, Some(&mut dh1), grads, trainable);
        {
            let (gr, gb) = split_pair(grads, l.slot(slots.ln1_g).range(), l.slot(slots.ln1_b).range());
            layer_norm_backward(&lt.ln1, w.tensor(slots.ln1_g), &dh1, &mut dx, params.then_some((gr, gb)));
        }
    }

    if trainable.contains(group_of(l.tok_emb)) {
        let prefix = trace.prefix;
        let tok = l.slot(l.tok_emb).offset;
        for (t, &id) in trace.tokens.iter().enumerate() {
            let src = &dx[(prefix + t) * d..(prefix + t + 1) * d];
            let dst = &mut grads[tok + id as usize * d..tok + (id as usize + 1) * d];
            for (g, v) in dst.iter_mut().zip(src) {
                *g += v;
            }
        }
        let pos = l.slot(l.pos_emb).offset;
        for (g, v) in grads[pos..pos + n * d].iter_mut().zip(&dx) {
            *g += v;
        }
    }
    if trace.prefix > 0 && trainable.contains(group_of(l.obs_w)) {
        let p = trace.prefix;
        gemm(cfg.d_obs, p, d, 1.0, &trace.obs, true, &dx[..p * d], false, 1.0, &mut grads[l.slot(l.obs_w).range()]);
        bias_grad(&dx[..p * d], &mut grads[l.slot(l.obs_b).range()]);
    }
}

/// Two disjoint mutable windows of the gradient buffer.
fn split_pair(
    grads: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start, "slots out of order");
    let (lo, hi) = grads.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

/// Logits `t x vocab` for `t` hidden rows, plus the adapter intermediate.
pub fn lm_logits(w: &ModelWeights, hidden: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
    let mut logits = vec![0.0; t * w.config.vocab_size];
    let xa = linear_forward(w, &w.layout.lm_head, hidden, t, &mut logits);
    (logits, xa)
}

/// Backward through the output head; returns the hidden-state gradient.
pub fn lm_backward(
    w: &ModelWeights,
    hidden: &[f64],
    xa: &[f64],
    d_logits: &[f64],
    t: usize,
    grads: &mut [f64],
    trainable: &Trainable,
) -> Vec<f64> {
    let mut dh = vec![0.0; t * w.config.d_model];
    linear_backward(w, &w.layout.lm_head, hidden, xa, d_logits, t, Some(&mut dh), grads, trainable);
    dh
}

/// Logits and hidden states of the token positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub hidden: Vec<f64>,
    pub token_count: usize,
    pub vocab_size: usize,
    pub d_model: usize,
}

impl ForwardOutput {
    pub fn logits_at(&self, t: usize) -> &[f64] {
        &self.logits[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn hidden_at(&self, t: usize) -> &[f64] {
        &self.hidden[t * self.d_model..(t + 1) * self.d_model]
    }
}

pub fn forward(w: &ModelWeights, obs: Option<&ObservationSeq>, tokens: &[u32]) -> Result<ForwardOutput> {
    let trace = forward_trace(w, obs, tokens)?;
    let d = w.config.d_model;
    let t = trace.token_count();
    let hidden = trace.token_hidden(d).to_vec();
    let (logits, _) = lm_logits(w, &hidden, t);
    Ok(ForwardOutput {
        logits,
        hidden,
        token_count: t,
        vocab_size: w.config.vocab_size,
        d_model: d,
    })
}
