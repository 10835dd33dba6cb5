use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::retrieval::{Direction, DEFAULT_KS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub n_samples: usize,
    /// Millimeters.
    pub mpjpe: f64,
    /// Millimeters.
    pub pa_mpjpe: f64,
    pub mpjre_x100: f64,
    /// Keyed `t2p@5`, `p2t@10`, ...
    #[serde(default)]
    pub recall: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_consistency: Option<f64>,
    /// Fraction of scenes where the output is nearest the queried person.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpe_accuracy: Option<f64>,
    /// Fraction of answers that contained a pose token.
    pub pose_rate: f64,
}

pub fn recall_key(direction: Direction, k: usize) -> String {
    format!("{}@{k}", direction.tag())
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidRecord("report over zero samples".into()));
        }
        for (name, v) in [("mpjpe", self.mpjpe), ("pa_mpjpe", self.pa_mpjpe), ("mpjre_x100", self.mpjre_x100)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidRecord(format!("{name} = {v} is not a non-negative error")));
            }
        }
        let rates = self
            .recall
            .values()
            .copied()
            .chain(self.caption_consistency)
            .chain(self.rpe_accuracy)
            .chain(std::iter::once(self.pose_rate));
        for r in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidRecord(format!("rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report fields serialize")
    }

    pub fn from_json_line(line: &str) -> Result<MetricReport> {
        let r: MetricReport = serde_json::from_str(line).map_err(|e| Error::parse(1, e.to_string()))?;
        r.validate()?;
        Ok(r)
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Human-readable table: pose errors, then recall in both directions.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let mut header = format!(
        "{:<10} {:>6} {:>9} {:>9} {:>11}",
        "task", "n", "MPJPE", "PA-MPJPE", "MPJRE(x100)"
    );
    for dir in [Direction::TextToPose, Direction::PoseToText] {
        for k in DEFAULT_KS {
            let _ = write!(header, " {:>8}", recall_key(dir, k));
        }
    }
    let _ = write!(header, " {:>8} {:>8} {:>8}", "caption", "rpe", "pose");
    out.push_str(&header);
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{:<10} {:>6} {:>9.2} {:>9.2} {:>11.3}",
            r.task, r.n_samples, r.mpjpe, r.pa_mpjpe, r.mpjre_x100
        );
        for dir in [Direction::TextToPose, Direction::PoseToText] {
            for k in DEFAULT_KS {
                let _ = write!(out, " {:>8}", cell(r.recall.get(&recall_key(dir, k)).copied(), 3));
            }
        }
        let _ = writeln!(
            out,
            " {:>8} {:>8} {:>8}",
            cell(r.caption_consistency, 3),
            cell(r.rpe_accuracy, 3),
            cell(Some(r.pose_rate), 3)
        );
    }
    out
}
