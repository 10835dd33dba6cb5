//! Plain-text checkpoint container.
//!
//! ```text
//! posetok-checkpoint 1
//! config d_model=64 n_layers=2 ...
//! meta stage=finetune step=1200
//! vocab <count> <sha256 of the vocab text>
//! <id>\t<token>                  (count lines)
//! adapters true|false
//! tensor <name> <rows> <cols>
//! <cols values>                  (rows lines, row-major)
//! ...
//! end
//! ```
//!
//! Values use the shortest decimal form that parses back to the same `f64`,
//! so save/load is lossless.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::{Layout, ModelWeights};
use crate::tok::Vocab;

const MAGIC: &str = "posetok-checkpoint 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub stage: String,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub vocab: Vocab,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(weights: ModelWeights, vocab: Vocab, meta: CheckpointMeta) -> Result<Checkpoint> {
        if weights.config.vocab_size != vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "model has {} output classes, vocabulary has {} tokens",
                weights.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(Checkpoint { weights, vocab, meta })
    }

    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut out = String::with_capacity(w.params.len() * 22);
        out.push_str(MAGIC);
        out.push('\n');
        let cfg: Vec<String> = w.config.entries().iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "config {}", cfg.join(" "));
        let _ = writeln!(out, "meta stage={} step={}", self.meta.stage, self.meta.step);
        let _ = writeln!(out, "vocab {} {}", self.vocab.len(), self.vocab.hash());
        out.push_str(&self.vocab.to_text());
        let _ = writeln!(out, "adapters {}", w.has_adapters());
        for slot in &w.layout.slots {
            let _ = writeln!(out, "tensor {} {} {}", slot.name, slot.rows, slot.cols);
            for row in w.params[slot.range()].chunks(slot.cols) {
                for (i, v) in row.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of checkpoint, expected {what}")))
        };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::parse(n, "not a posetok checkpoint"));
        }

        let (n, line) = next("config")?;
        let body = line.strip_prefix("config ").ok_or_else(|| Error::parse(n, "expected `config`"))?;
        let mut config = ModelConfig::default();
        for pair in body.split_whitespace() {
            let (k, v) = pair.split_once('=').ok_or_else(|| Error::parse(n, format!("bad entry `{pair}`")))?;
            if !config.set(k, v).map_err(|e| Error::parse(n, e.to_string()))? {
                return Err(Error::parse(n, format!("unknown config key `{k}`")));
            }
        }
        config.validate().map_err(|e| Error::parse(n, e.to_string()))?;

        let (n, line) = next("meta")?;
        let body = line.strip_prefix("meta ").ok_or_else(|| Error::parse(n, "expected `meta`"))?;
        let mut meta = CheckpointMeta {
            stage: String::new(),
            step: 0,
        };
        for pair in body.split_whitespace() {
            match pair.split_once('=') {
                Some(("stage", v)) => meta.stage = v.to_string(),
                Some(("step", v)) => meta.step = v.parse().map_err(|_| Error::parse(n, "bad step"))?,
                _ => return Err(Error::parse(n, format!("bad meta entry `{pair}`"))),
            }
        }

        let (n, line) = next("vocab")?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("vocab") {
            return Err(Error::parse(n, "expected `vocab`"));
        }
        let count: usize = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::parse(n, "bad vocab count"))?;
        let hash = parts.next().ok_or_else(|| Error::parse(n, "missing vocab hash"))?.to_string();
        let mut vocab_text = String::new();
        for _ in 0..count {
            let (_, l) = next("vocab entry")?;
            vocab_text.push_str(l);
            vocab_text.push('\n');
        }
        let vocab = Vocab::parse(&vocab_text)?;
        if vocab.hash() != hash {
            return Err(Error::VocabMismatch(format!(
                "embedded vocabulary hashes to {}, header says {hash}",
                vocab.hash()
            )));
        }

        let (n, line) = next("adapters")?;
        let adapters = match line {
            "adapters true" => true,
            "adapters false" => false,
            _ => return Err(Error::parse(n, "expected `adapters true|false`")),
        };
        let layout = Layout::new(&config, adapters);
        let mut params = Vec::with_capacity(layout.total);
        for slot in &layout.slots {
            let (n, line) = next("tensor")?;
            let expected = format!("tensor {} {} {}", slot.name, slot.rows, slot.cols);
            if line != expected {
                return Err(Error::parse(n, format!("expected `{expected}`, found `{line}`")));
            }
            for _ in 0..slot.rows {
                let (n, row) = next("tensor row")?;
                let before = params.len();
                for v in row.split_whitespace() {
                    let x: f64 = v.parse().map_err(|_| Error::parse(n, format!("bad number `{v}`")))?;
                    if !x.is_finite() {
                        return Err(Error::parse(n, "non-finite parameter"));
                    }
                    params.push(x);
                }
                if params.len() - before != slot.cols {
                    return Err(Error::parse(n, format!("expected {} values", slot.cols)));
                }
            }
        }
        let (n, line) = next("end")?;
        if line != "end" {
            return Err(Error::parse(n, "expected `end`"));
        }
        let weights = ModelWeights { config, layout, params };
        Checkpoint::new(weights, vocab, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let text = self.to_text();
        std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
        Ok(content_hash(text.as_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }
}

/// SHA-256 hex digest, used for every artifact hash the tools print.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
