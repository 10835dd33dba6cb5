//! The two-stage training recipe.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ChatRecord, MixedBatches, RecordKind};
use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, CheckpointMeta};
use crate::model::params::{Group, ModelWeights, Trainable};
use crate::tok::Vocab;
use crate::train::config::TrainConfig;
use crate::train::loss::{accumulate, Example, LossComponents, Normalizer};
use crate::train::optim::AdamW;

/// Offset between the data-order seed and the adapter initialization seed.
const ADAPTER_SEED_OFFSET: u64 = 0x5eed_ada9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// All base weights on instruction data only.
    Base,
    /// Frozen base; adapters and the pose head on the mixed data.
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Finetune => "finetune",
        }
    }

    pub fn trainable(self) -> Trainable {
        match self {
            Stage::Base => Trainable::only(&[Group::Embedding, Group::Transformer, Group::LmHead]),
            Stage::Finetune => Trainable::only(&[Group::Adapter, Group::PoseHead]),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Stage::Base),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub ce: f64,
    pub pose_l1: f64,
    pub total: f64,
}

/// Files written while training. Either may be absent.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

/// Mixing source of a record: observation tasks, text tasks, instructions.
fn source_of(kind: RecordKind) -> usize {
    match kind {
        RecordKind::Obs2pose | RecordKind::Rpe => 0,
        RecordKind::Text2pose => 1,
        RecordKind::Vqa => 2,
    }
}

fn check_architecture(cfg: &TrainConfig, base: &ModelWeights) -> Result<()> {
    let mut wanted = cfg.model.clone();
    if wanted.vocab_size == 0 {
        wanted.vocab_size = base.config.vocab_size;
    }
    if wanted != base.config {
        return Err(Error::Config(
            "model settings differ from the base checkpoint's".into(),
        ));
    }
    Ok(())
}

/// Runs `cfg.optim.max_steps` optimizer steps. `vocab` is used by the base
/// stage; fine-tuning takes the vocabulary of `base`.
pub fn train_loop(
    stage: Stage,
    records: &[ChatRecord],
    cfg: &TrainConfig,
    base: Option<&Checkpoint>,
    vocab: &Vocab,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (weights, vocab) = match stage {
        Stage::Base => {
            if let Some(r) = records.iter().find(|r| r.kind != RecordKind::Vqa || r.has_pose()) {
                return Err(Error::Config(format!(
                    "base stage trains on instruction records only, found a {} record",
                    r.kind.name()
                )));
            }
            let mut model = cfg.model.clone();
            if model.vocab_size == 0 {
                model.vocab_size = vocab.len();
            } else if model.vocab_size != vocab.len() {
                return Err(Error::Config(format!(
                    "vocab_size {} but the vocabulary has {} tokens",
                    model.vocab_size,
                    vocab.len()
                )));
            }
            (ModelWeights::init(&model, cfg.optim.rng_seed)?, vocab.clone())
        }
        Stage::Finetune => {
            let base = base.ok_or_else(|| Error::Config("finetune needs a base checkpoint".into()))?;
            if base.weights.has_adapters() {
                return Err(Error::Config("base checkpoint already carries adapters".into()));
            }
            check_architecture(cfg, &base.weights)?;
            let w = base
                .weights
                .with_adapters(cfg.optim.rng_seed.wrapping_add(ADAPTER_SEED_OFFSET))?;
            (w, base.vocab.clone())
        }
    };
    let mut weights = weights;

    let examples = records
        .iter()
        .map(|r| {
            r.validate()?;
            Example::encode(&vocab, r)
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut sources, ratio): (Vec<Vec<usize>>, Vec<usize>) = match stage {
        Stage::Base => (vec![(0..records.len()).collect()], vec![1]),
        Stage::Finetune => (vec![Vec::new(); 3], cfg.mix_ratio.to_vec()),
    };
    if stage == Stage::Finetune {
        for (i, r) in records.iter().enumerate() {
            sources[source_of(r.kind)].push(i);
        }
        for (s, name) in sources.iter().zip(["observation", "text-to-pose", "instruction"]) {
            if s.is_empty() {
                return Err(Error::Config(format!("finetune data has no {name} records")));
            }
        }
    }
    let sizes: Vec<usize> = sources.iter().map(Vec::len).collect();
    let mut batches = MixedBatches::new(&sizes, &ratio, cfg.optim.batch_size, cfg.optim.rng_seed)?;

    let trainable = stage.trainable();
    let mask = weights.layout.mask(&trainable);
    let mut opt = AdamW::new(weights.params.len());
    let mut log = Vec::with_capacity(cfg.optim.max_steps);
    let mut log_file = match &outputs.log {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };

    let meta = |step: usize| CheckpointMeta {
        stage: stage.name().to_string(),
        step: step as u64,
    };

    let mut grads = vec![0.0; weights.params.len()];
    for step in 1..=cfg.optim.max_steps {
        let micro: Vec<Vec<&Example>> = (0..cfg.optim.grad_accum_steps)
            .map(|_| {
                batches
                    .next()
                    .expect("endless batches")
                    .into_iter()
                    .map(|(s, i)| &examples[sources[s][i]])
                    .collect()
            })
            .collect();
        let all: Vec<&Example> = micro.iter().flatten().copied().collect();
        let norm = Normalizer::of(&all);
        grads.fill(0.0);
        let mut sum = LossComponents {
            ce: 0.0,
            pose_l1: 0.0,
            total: 0.0,
        };
        for mb in &micro {
            let c = accumulate(&weights, mb, &cfg.loss, norm, Some(&mut grads), &trainable)?;
            sum.ce += c.ce;
            sum.pose_l1 += c.pose_l1;
        }
        sum.total = cfg.loss.combine(sum.ce, sum.pose_l1);
        if !sum.total.is_finite() || !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        opt.step(&mut weights.params, &grads, &mask, &cfg.optim)?;

        let entry = StepLog {
            step,
            ce: sum.ce,
            pose_l1: sum.pose_l1,
            total: sum.total,
        };
        if let (Some(f), Some(p)) = (log_file.as_mut(), outputs.log.as_ref()) {
            let line = serde_json::to_string(&entry).expect("plain numbers serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        log.push(entry);

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.optim.max_steps {
            if let Some(p) = &outputs.checkpoint {
                Checkpoint::new(weights.clone(), vocab.clone(), meta(step))?.save(p)?;
            }
        }
    }
    if let (Some(mut f), Some(p)) = (log_file, outputs.log.as_ref()) {
        f.flush().map_err(|e| Error::io(p, e))?;
    }

    let checkpoint = Checkpoint::new(weights, vocab, meta(cfg.optim.max_steps))?;
    if let Some(p) = &outputs.checkpoint {
        checkpoint.save(p)?;
    }
    Ok(TrainOutcome { checkpoint, log })
}

/// Path of the metrics log written next to a checkpoint.
pub fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}
