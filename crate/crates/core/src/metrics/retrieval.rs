//! Contrastive text/pose dual encoder and recall@k.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rotmath::{PoseParams, NUM_JOINTS};
use crate::tok::Vocab;
use crate::train::optim::{AdamW, OptimConfig};

const POSE_DIM: usize = NUM_JOINTS * 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    /// Caption queries against a pose gallery.
    TextToPose,
    /// Pose queries against a caption gallery.
    PoseToText,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::TextToPose => "t2p",
            Direction::PoseToText => "p2t",
        }
    }
}

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalConfig {
    pub hidden: usize,
    pub embed: usize,
    pub temperature: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            hidden: 64,
            embed: 32,
            temperature: 0.07,
            batch_size: 64,
            steps: 400,
            learning_rate: 3e-3,
        }
    }
}

/// Two-layer tower: `input -> hidden (tanh) -> embed`, output normalized.
#[derive(Clone, Debug, PartialEq)]
struct Tower {
    d_in: usize,
    hidden: usize,
    embed: usize,
    /// `w1 (d_in x hidden) | b1 | w2 (hidden x embed) | b2`, flat.
    params: Vec<f64>,
}

struct TowerCache {
    input: Vec<f64>,
    act: Vec<f64>,
    z_norm: f64,
    out: Vec<f64>,
}

impl Tower {
    fn new(d_in: usize, hidden: usize, embed: usize, rng: &mut ChaCha8Rng) -> Tower {
        let mut params = vec![0.0; Tower::size(d_in, hidden, embed)];
        let n1 = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive std");
        for p in &mut params[..d_in * hidden] {
            *p = n1.sample(rng);
        }
        let w2 = d_in * hidden + hidden;
        for p in &mut params[w2..w2 + hidden * embed] {
            *p = n2.sample(rng);
        }
        Tower {
            d_in,
            hidden,
            embed,
            params,
        }
    }

    fn size(d_in: usize, hidden: usize, embed: usize) -> usize {
        d_in * hidden + hidden + hidden * embed + embed
    }

    fn forward(&self, input: &[f64]) -> TowerCache {
        let (h, e) = (self.hidden, self.embed);
        let w1 = &self.params[..self.d_in * h];
        let b1 = &self.params[self.d_in * h..self.d_in * h + h];
        let off = self.d_in * h + h;
        let w2 = &self.params[off..off + h * e];
        let b2 = &self.params[off + h * e..];
        let mut act = b1.to_vec();
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                for (a, w) in act.iter_mut().zip(&w1[i * h..(i + 1) * h]) {
                    *a += x * w;
                }
            }
        }
        for a in act.iter_mut() {
            *a = a.tanh();
        }
        let mut z = b2.to_vec();
        for (k, &a) in act.iter().enumerate() {
            for (zz, w) in z.iter_mut().zip(&w2[k * e..(k + 1) * e]) {
                *zz += a * w;
            }
        }
        let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let out = z.iter().map(|v| v / z_norm).collect();
        TowerCache {
            input: input.to_vec(),
            act,
            z_norm,
            out,
        }
    }

    fn backward(&self, c: &TowerCache, d_out: &[f64], grads: &mut [f64]) {
        let (h, e) = (self.hidden, self.embed);
        let dot: f64 = c.out.iter().zip(d_out).map(|(o, d)| o * d).sum();
        let dz: Vec<f64> = c.out.iter().zip(d_out).map(|(o, d)| (d - o * dot) / c.z_norm).collect();
        let off = self.d_in * h + h;
        let w2 = &self.params[off..off + h * e];
        let mut dact = vec![0.0; h];
        for k in 0..h {
            let row = &w2[k * e..(k + 1) * e];
            let g = &mut grads[off + k * e..off + (k + 1) * e];
            for m in 0..e {
                g[m] += c.act[k] * dz[m];
                dact[k] += row[m] * dz[m];
            }
        }
        for (g, d) in grads[off + h * e..].iter_mut().zip(&dz) {
            *g += d;
        }
        for (d, a) in dact.iter_mut().zip(&c.act) {
            *d *= 1.0 - a * a;
        }
        for (i, &x) in c.input.iter().enumerate() {
            if x != 0.0 {
                for (g, d) in grads[i * h..(i + 1) * h].iter_mut().zip(&dact) {
                    *g += x * d;
                }
            }
        }
        for (g, d) in grads[self.d_in * h..self.d_in * h + h].iter_mut().zip(&dact) {
            *g += d;
        }
    }
}

/// Text tower over bag-of-token-id features and pose tower over the 6D
/// flattening, trained with a symmetric in-batch contrastive objective.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalModel {
    vocab: Vocab,
    text: Tower,
    pose: Tower,
    temperature: f64,
}

impl RetrievalModel {
    fn text_features(&self, caption: &str) -> Vec<f64> {
        let mut f = vec![0.0; self.vocab.len()];
        let ids = self.vocab.encode_words(caption);
        for &id in &ids {
            f[id as usize] += 1.0;
        }
        let n = ids.len().max(1) as f64;
        for v in f.iter_mut() {
            *v /= n;
        }
        f
    }

    pub fn embed_text(&self, caption: &str) -> Vec<f64> {
        self.text.forward(&self.text_features(caption)).out
    }

    pub fn embed_pose(&self, pose: &PoseParams) -> Vec<f64> {
        self.pose.forward(&pose.to_6d()).out
    }

    fn batch_loss(&self, captions: &[&str], poses: &[&PoseParams], grads: Option<(&mut [f64], &mut [f64])>) -> f64 {
        let b = captions.len();
        let tc: Vec<TowerCache> = captions.iter().map(|c| self.text.forward(&self.text_features(c))).collect();
        let pc: Vec<TowerCache> = poses.iter().map(|p| self.pose.forward(&p.to_6d())).collect();
        let tau = self.temperature;
        let mut s = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                s[i * b + j] = dot(&tc[i].out, &pc[j].out) / tau;
            }
        }
        let mut ds = vec![0.0; b * b];
        let mut loss = 0.0;
        let norm = 1.0 / (2.0 * b as f64);
        for i in 0..b {
            let row: Vec<f64> = (0..b).map(|j| s[i * b + j]).collect();
            let lse = crate::model::kernels::log_sum_exp(&row);
            loss += lse - s[i * b + i];
            for j in 0..b {
                ds[i * b + j] += norm * (row[j] - lse).exp();
            }
            ds[i * b + i] -= norm;
        }
        for j in 0..b {
            let col: Vec<f64> = (0..b).map(|i| s[i * b + j]).collect();
            let lse = crate::model::kernels::log_sum_exp(&col);
            loss += lse - s[j * b + j];
            for i in 0..b {
                ds[i * b + j] += norm * (col[i] - lse).exp();
            }
            ds[j * b + j] -= norm;
        }
        if let Some((gt, gp)) = grads {
            let e = self.text.embed;
            for i in 0..b {
                let mut dt = vec![0.0; e];
                for j in 0..b {
                    let g = ds[i * b + j] / tau;
                    for m in 0..e {
                        dt[m] += g * pc[j].out[m];
                    }
                }
                self.text.backward(&tc[i], &dt, gt);
            }
            for j in 0..b {
                let mut dp = vec![0.0; e];
                for i in 0..b {
                    let g = ds[i * b + j] / tau;
                    for m in 0..e {
                        dp[m] += g * tc[i].out[m];
                    }
                }
                self.pose.backward(&pc[j], &dp, gp);
            }
        }
        loss * norm
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the dual encoder on aligned `(caption, pose)` pairs.
pub fn train_retrieval(
    captions: &[String],
    poses: &[PoseParams],
    vocab: &Vocab,
    cfg: &RetrievalConfig,
    seed: u64,
) -> Result<RetrievalModel> {
    if captions.len() != poses.len() {
        return Err(Error::SizeMismatch(format!(
            "{} captions for {} poses",
            captions.len(),
            poses.len()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("contrastive batch size must be at least 2".into()));
    }
    if captions.len() < 2 {
        return Err(Error::Config("need at least two pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = Tower::new(vocab.len(), cfg.hidden, cfg.embed, &mut rng);
    let pose = Tower::new(POSE_DIM, cfg.hidden, cfg.embed, &mut rng);
    let mut model = RetrievalModel {
        vocab: vocab.clone(),
        text,
        pose,
        temperature: cfg.temperature,
    };
    let nt = model.text.params.len();
    let np = model.pose.params.len();
    let optim = OptimConfig {
        learning_rate: cfg.learning_rate,
        ..OptimConfig::default()
    };
    let mut opt = AdamW::new(nt + np);
    let mask = vec![true; nt + np];
    let mut params = vec![0.0; nt + np];
    let mut grads = vec![0.0; nt + np];
    let batch = cfg.batch_size.min(captions.len());
    let mut order: Vec<usize> = (0..captions.len()).collect();
    let mut cursor = order.len();
    for _ in 0..cfg.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let caps: Vec<&str> = idx.iter().map(|&i| captions[i].as_str()).collect();
        let ps: Vec<&PoseParams> = idx.iter().map(|&i| &poses[i]).collect();
        grads.fill(0.0);
        {
            let (gt, gp) = grads.split_at_mut(nt);
            model.batch_loss(&caps, &ps, Some((gt, gp)));
        }
        params[..nt].copy_from_slice(&model.text.params);
        params[nt..].copy_from_slice(&model.pose.params);
        opt.step(&mut params, &grads, &mask, &optim)?;
        model.text.params.copy_from_slice(&params[..nt]);
        model.pose.params.copy_from_slice(&params[nt..]);
    }
    Ok(model)
}

/// Recall@k for every `k` given a score between query `q` and gallery item
/// `g`; the true match of query `i` is gallery item `i`. Ties rank the
/// lower gallery index first.
pub fn recall_from_scores(n: usize, score: impl Fn(usize, usize) -> f64, ks: &[usize]) -> Vec<(usize, f64)> {
    let mut hits = vec![0usize; ks.len()];
    for q in 0..n {
        let own = score(q, q);
        let rank = (0..n)
            .filter(|&g| {
                let s = score(q, g);
                s > own || (s == own && g < q)
            })
            .count();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank < k {
                *h += 1;
            }
        }
    }
    ks.iter()
        .zip(hits)
        .map(|(&k, h)| (k, h as f64 / n as f64))
        .collect()
}

/// Recall@k of aligned embedding lists by cosine similarity (inputs are
/// unit vectors, so the dot product).
pub fn recall_from_embeddings(queries: &[Vec<f64>], gallery: &[Vec<f64>], ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    if queries.len() != gallery.len() {
        return Err(Error::SizeMismatch(format!(
            "{} queries for a gallery of {}",
            queries.len(),
            gallery.len()
        )));
    }
    if queries.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(recall_from_scores(queries.len(), |q, g| dot(&queries[q], &gallery[g]), ks))
}

pub fn recall_at_k(
    model: &RetrievalModel,
    captions: &[String],
    poses: &[PoseParams],
    direction: Direction,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if captions.len() != poses.len() {
        return Err(Error::SizeMismatch(format!(
            "{} captions for {} poses",
            captions.len(),
            poses.len()
        )));
    }
    let t: Vec<Vec<f64>> = captions.iter().map(|c| model.embed_text(c)).collect();
    let p: Vec<Vec<f64>> = poses.iter().map(|x| model.embed_pose(x)).collect();
    match direction {
        Direction::TextToPose => recall_from_embeddings(&t, &p, ks),
        Direction::PoseToText => recall_from_embeddings(&p, &t, ks),
    }
}
