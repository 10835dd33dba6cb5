//! Flat parameter storage. Every tensor is a named slot into one `Vec<f64>`,
//! so gradients and optimizer moments share the same layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::kernels::gemm;
use crate::rotmath::{Rot6D, NUM_JOINTS};

pub const POSE_OUT: usize = NUM_JOINTS * 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Embedding,
    ObsProjection,
    Transformer,
    LmHead,
    PoseHead,
    Adapter,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Embedding,
        Group::ObsProjection,
        Group::Transformer,
        Group::LmHead,
        Group::PoseHead,
        Group::Adapter,
    ];

    fn index(self) -> usize {
        Group::ALL.iter().position(|&g| g == self).expect("listed group")
    }
}

/// Which parameter groups receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable([bool; 6]);

impl Trainable {
    pub fn all() -> Self {
        let mut t = Trainable([true; 6]);
        t.0[Group::ObsProjection.index()] = false;
        t
    }

    pub fn none() -> Self {
        Trainable([false; 6])
    }

    pub fn only(groups: &[Group]) -> Self {
        let mut t = Trainable::none();
        for g in groups {
            t.0[g.index()] = true;
        }
        t
    }

    pub fn contains(&self, g: Group) -> bool {
        self.0[g.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub name: String,
    pub group: Group,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Low-rank pair `A: d_in x r`, `B: r x d_out` (slot indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdapterPair {
    pub a: usize,
    pub b: usize,
}

/// A dense map `x W + b` with an optional adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearSlots {
    pub w: usize,
    pub b: Option<usize>,
    pub adapter: Option<AdapterPair>,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSlots {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub q: LinearSlots,
    pub k: LinearSlots,
    pub v: LinearSlots,
    pub o: LinearSlots,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff1: LinearSlots,
    pub ff2: LinearSlots,
}

impl LayerSlots {
    pub fn linears_mut(&mut self) -> [&mut LinearSlots; 6] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o, &mut self.ff1, &mut self.ff2]
    }

    pub fn linears(&self) -> [&LinearSlots; 6] {
        [&self.q, &self.k, &self.v, &self.o, &self.ff1, &self.ff2]
    }
}

const LINEAR_NAMES: [&str; 6] = ["q", "k", "v", "o", "ff1", "ff2"];

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub obs_w: usize,
    pub obs_b: usize,
    pub layers: Vec<LayerSlots>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub lm_head: LinearSlots,
    pub pose1: LinearSlots,
    pub pose2: LinearSlots,
    pub has_adapters: bool,
    pub total: usize,
}

struct Builder {
    slots: Vec<Slot>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, group: Group, rows: usize, cols: usize) -> usize {
        self.slots.push(Slot {
            name,
            group,
            offset: self.total,
            rows,
            cols,
        });
        self.total += rows * cols;
        self.slots.len() - 1
    }

    fn linear(&mut self, name: &str, group: Group, d_in: usize, d_out: usize, bias: bool) -> LinearSlots {
        let w = self.add(format!("{name}.w"), group, d_in, d_out);
        let b = bias.then(|| self.add(format!("{name}.b"), group, 1, d_out));
        LinearSlots {
            w,
            b,
            adapter: None,
            d_in,
            d_out,
        }
    }

    fn adapter(&mut self, name: &str, lin: &mut LinearSlots, rank: usize) {
        let a = self.add(format!("{name}.lora_a"), Group::Adapter, lin.d_in, rank);
        let b = self.add(format!("{name}.lora_b"), Group::Adapter, rank, lin.d_out);
        lin.adapter = Some(AdapterPair { a, b });
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig, adapters: bool) -> Layout {
        let d = cfg.d_model;
        let mut bld = Builder {
            slots: Vec::new(),
            total: 0,
        };
        let tok_emb = bld.add("tok_emb".into(), Group::Embedding, cfg.vocab_size, d);
        let pos_emb = bld.add("pos_emb".into(), Group::Embedding, cfg.max_seq, d);
        let obs_w = bld.add("obs_proj.w".into(), Group::ObsProjection, cfg.d_obs, d);
        let obs_b = bld.add("obs_proj.b".into(), Group::ObsProjection, 1, d);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let t = Group::Transformer;
            let p = |s: &str| format!("layer{l}.{s}");
            let ln1_g = bld.add(p("ln1.g"), t, 1, d);
            let ln1_b = bld.add(p("ln1.b"), t, 1, d);
            let q = bld.linear(&p("q"), t, d, d, true);
            let k = bld.linear(&p("k"), t, d, d, true);
            let v = bld.linear(&p("v"), t, d, d, true);
            let o = bld.linear(&p("o"), t, d, d, true);
            let ln2_g = bld.add(p("ln2.g"), t, 1, d);
            let ln2_b = bld.add(p("ln2.b"), t, 1, d);
            let ff1 = bld.linear(&p("ff1"), t, d, cfg.d_ff, true);
            let ff2 = bld.linear(&p("ff2"), t, cfg.d_ff, d, true);
            layers.push(LayerSlots {
                ln1_g,
                ln1_b,
                q,
                k,
                v,
                o,
                ln2_g,
                ln2_b,
                ff1,
                ff2,
            });
        }
        let lnf_g = bld.add("lnf.g".into(), Group::Transformer, 1, d);
        let lnf_b = bld.add("lnf.b".into(), Group::Transformer, 1, d);
        let mut lm_head = bld.linear("lm_head", Group::LmHead, d, cfg.vocab_size, false);
        let pose1 = bld.linear("pose1", Group::PoseHead, d, d, true);
        let pose2 = bld.linear("pose2", Group::PoseHead, d, POSE_OUT, true);
        // Adapters go last so base offsets do not depend on their presence.
        if adapters {
            for (l, layer) in layers.iter_mut().enumerate() {
                for (lin, name) in layer.linears_mut().into_iter().zip(LINEAR_NAMES) {
                    bld.adapter(&format!("layer{l}.{name}"), lin, cfg.lora_rank);
                }
            }
            bld.adapter("lm_head", &mut lm_head, cfg.lora_rank);
        }
        Layout {
            slots: bld.slots,
            tok_emb,
            pos_emb,
            obs_w,
            obs_b,
            layers,
            lnf_g,
            lnf_b,
            lm_head,
            pose1,
            pose2,
            has_adapters: adapters,
            total: bld.total,
        }
    }

    pub fn slot(&self, i: usize) -> &Slot {
        &self.slots[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn adapted_linears(&self) -> Vec<&LinearSlots> {
        let mut out: Vec<&LinearSlots> = self.layers.iter().flat_map(|l| l.linears()).collect();
        out.push(&self.lm_head);
        out.retain(|l| l.adapter.is_some());
        out
    }

    /// Per-parameter trainability under `t`.
    pub fn mask(&self, t: &Trainable) -> Vec<bool> {
        let mut m = vec![false; self.total];
        for s in &self.slots {
            if t.contains(s.group) {
                m[s.range()].fill(true);
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

const EMBED_STD: f64 = 0.2;
const OBS_BIAS_STD: f64 = 0.5;
const POSE_OUT_STD: f64 = 0.01;
const POS_AMPLITUDE: f64 = 0.5;

/// Sinusoidal starting point for the learned position table, so that
/// fixed offsets are linear maps from the outset.
fn sinusoid(table: &mut [f64], d: usize) {
    for (p, row) in table.chunks_mut(d).enumerate() {
        for i in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] = POS_AMPLITUDE * angle.sin();
            row[2 * i + 1] = POS_AMPLITUDE * angle.cos();
        }
    }
}

impl ModelWeights {
    /// Seeded random initialization of the base model.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
        config.validate()?;
        let layout = Layout::new(config, false);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |params: &mut [f64], slot: &Slot, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[slot.range()] {
                *p = normal.sample(&mut rng);
            }
        };
        let residual = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        for slot in &layout.slots {
            let name = slot.name.as_str();
            let fan_in = (slot.rows as f64).sqrt();
            if name.ends_with(".g") {
                params[slot.range()].fill(1.0);
            } else if name == "tok_emb" {
                fill(&mut params, slot, EMBED_STD);
            } else if name == "pos_emb" {
                sinusoid(&mut params[slot.range()], slot.cols);
            } else if name == "obs_proj.b" {
                fill(&mut params, slot, OBS_BIAS_STD);
            } else if name == "pose2.w" {
                fill(&mut params, slot, POSE_OUT_STD);
            } else if name.ends_with(".o.w") || name.ends_with(".ff2.w") {
                fill(&mut params, slot, residual / fan_in);
            } else if name.ends_with(".w") {
                fill(&mut params, slot, 1.0 / fan_in);
            }
        }
        let identity = Rot6D::identity().to_array();
        let b2 = layout.slot(layout.pose2.b.expect("pose head bias")).range();
        for (j, chunk) in params[b2].chunks_mut(6).enumerate() {
            debug_assert!(j < NUM_JOINTS);
            chunk.copy_from_slice(&identity);
        }
        Ok(ModelWeights {
            config: config.clone(),
            layout,
            params,
        })
    }

    pub fn tensor(&self, slot: usize) -> &[f64] {
        &self.params[self.layout.slots[slot].range()]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut [f64] {
        let r = self.layout.slots[slot].range();
        &mut self.params[r]
    }

    pub fn has_adapters(&self) -> bool {
        self.layout.has_adapters
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Copy with fresh adapters: `A` random, `B` zero, so the adapted model
    /// computes exactly what the base model computes.
    pub fn with_adapters(&self, seed: u64) -> Result<ModelWeights> {
        if self.has_adapters() {
            return Err(Error::Config("model already has adapters".into()));
        }
        let layout = Layout::new(&self.config, true);
        let mut params = self.params.clone();
        params.resize(layout.total, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for lin in layout.adapted_linears() {
            let pair = lin.adapter.expect("adapted");
            let a = layout.slot(pair.a);
            let normal = Normal::new(0.0, 1.0 / (a.rows as f64).sqrt()).expect("positive std");
            for p in &mut params[a.range()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(ModelWeights {
            config: self.config.clone(),
            layout,
            params,
        })
    }

    /// Folds every adapter into its weight, `W + (alpha/r) A B`, and drops
    /// the adapter parameters.
    pub fn merge_adapters(&self) -> Result<ModelWeights> {
        if !self.has_adapters() {
            return Err(Error::Config("model has no adapters to merge".into()));
        }
        let base_layout = Layout::new(&self.config, false);
        let mut params = self.params[..base_layout.total].to_vec();
        let scale = self.config.lora_scale();
        let r = self.config.lora_rank;
        for lin in self.layout.adapted_linears() {
            let pair = lin.adapter.expect("adapted");
            let w = self.layout.slot(lin.w).range();
            gemm(
                lin.d_in,
                r,
                lin.d_out,
                scale,
                self.tensor(pair.a),
                false,
                self.tensor(pair.b),
                false,
                1.0,
                &mut params[w],
            );
        }
        Ok(ModelWeights {
            config: self.config.clone(),
            layout: base_layout,
            params,
        })
    }

    /// The base part of an adapted model, adapters discarded unmerged.
    pub fn without_adapters(&self) -> ModelWeights {
        let layout = Layout::new(&self.config, false);
        ModelWeights {
            config: self.config.clone(),
            params: self.params[..layout.total].to_vec(),
            layout,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }
}
