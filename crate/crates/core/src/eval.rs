//! Evaluation protocols: decode every record greedily, then score the poses.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::body::{forward_kinematics, KinematicTree};
use crate::data::{activity_of, caption_pose, ChatRecord, RecordKind};
use crate::error::{Error, Result};
use crate::metrics::{
    mpjpe, mpjre, pa_mpjpe, recall_at_k, recall_key, train_retrieval, Direction, MetricReport, RetrievalConfig,
    DEFAULT_KS,
};
use crate::model::{generate, Checkpoint, DecodeMode};
use crate::rotmath::PoseParams;
use crate::tok::{Vocab, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Pose from an observation of one person.
    PoseEst,
    /// Pose from an explicit description.
    PoseGen,
    /// Pose of the queried person in a multi-person scene.
    Rpe,
    /// Pose from an activity sentence.
    Spg,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PoseEst => "pose-est",
            Task::PoseGen => "pose-gen",
            Task::Rpe => "rpe",
            Task::Spg => "spg",
        }
    }

    fn expects(self) -> RecordKind {
        match self {
            Task::PoseEst => RecordKind::Obs2pose,
            Task::PoseGen | Task::Spg => RecordKind::Text2pose,
            Task::Rpe => RecordKind::Rpe,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose-est" => Ok(Task::PoseEst),
            "pose-gen" => Ok(Task::PoseGen),
            "rpe" => Ok(Task::Rpe),
            "spg" => Ok(Task::Spg),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Fraction of observation joint vectors zeroed before decoding.
    pub mask_fraction: f64,
    pub mask_seed: u64,
    pub max_new: usize,
    pub retrieval: RetrievalConfig,
    pub retrieval_seed: u64,
    /// Train a retrieval model and report recall (pose-gen only).
    pub with_recall: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mask_fraction: 0.0,
            mask_seed: 0,
            max_new: 24,
            retrieval: RetrievalConfig::default(),
            retrieval_seed: 0,
            with_recall: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub report: MetricReport,
    pub answers: Vec<String>,
    /// Decoded poses; `None` where no pose token was produced.
    pub poses: Vec<Option<PoseParams>>,
}

/// Every record must tokenize without unknown words under `vocab`.
pub fn check_vocab(vocab: &Vocab, records: &[ChatRecord]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        for text in [&r.question, &r.answer] {
            if vocab.encode_words(text).contains(&UNK) {
                return Err(Error::VocabMismatch(format!(
                    "record {} has words outside the checkpoint vocabulary",
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

fn check_task(task: Task, records: &[ChatRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(r) = records.iter().find(|r| r.kind != task.expects() || r.target_pose.is_none()) {
        return Err(Error::Config(format!(
            "task {} expects {} records with target poses, found {}",
            task.name(),
            task.expects().name(),
            r.kind.name()
        )));
    }
    Ok(())
}

/// Decodes every record and scores the result.
pub fn evaluate(ckpt: &Checkpoint, task: Task, records: &[ChatRecord], opts: &EvalOptions) -> Result<EvalResult> {
    check_task(task, records)?;
    check_vocab(&ckpt.vocab, records)?;
    let mut answers = Vec::with_capacity(records.len());
    let mut poses = Vec::with_capacity(records.len());
    for r in records {
        let prompt = ckpt.vocab.prompt_ids(&r.question);
        let obs = match (&r.observation, opts.mask_fraction > 0.0) {
            (Some(o), true) => Some(o.masked(opts.mask_fraction, opts.mask_seed ^ r.seed)),
            (o, _) => o.clone(),
        };
        let g = generate(&ckpt.weights, obs.as_ref(), &prompt, opts.max_new, DecodeMode::Greedy)?;
        answers.push(ckpt.vocab.decode(&g.tokens));
        poses.push(g.pose);
    }
    let report = score(task, records, &poses, &ckpt.vocab, opts)?;
    Ok(EvalResult { report, answers, poses })
}

/// Scores given predictions against the records' targets. Missing poses
/// count as the identity pose.
pub fn score(
    task: Task,
    records: &[ChatRecord],
    predictions: &[Option<PoseParams>],
    vocab: &Vocab,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    check_task(task, records)?;
    if predictions.len() != records.len() {
        return Err(Error::SizeMismatch(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    let tree = KinematicTree::default_skeleton();
    let n = records.len();
    let identity = PoseParams::identity();
    let preds: Vec<&PoseParams> = predictions.iter().map(|p| p.as_ref().unwrap_or(&identity)).collect();
    let targets: Vec<&PoseParams> = records.iter().map(|r| r.target_pose.as_ref().expect("checked")).collect();

    let (mut e_pos, mut e_pa, mut e_rot) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(&targets) {
        let jp = forward_kinematics(p, &tree);
        let jt = forward_kinematics(t, &tree);
        e_pos += mpjpe(&jp, &jt)?;
        e_pa += pa_mpjpe(&jp, &jt)?;
        e_rot += mpjre(p, t);
    }
    let nf = n as f64;
    let mut report = MetricReport {
        task: task.name().to_string(),
        n_samples: n,
        mpjpe: e_pos / nf,
        pa_mpjpe: e_pa / nf,
        mpjre_x100: e_rot / nf,
        recall: BTreeMap::new(),
        caption_consistency: None,
        rpe_accuracy: None,
        pose_rate: predictions.iter().filter(|p| p.is_some()).count() as f64 / nf,
    };

    match task {
        Task::PoseGen => {
            let captions: Vec<String> = targets.iter().map(|t| caption_pose(t)).collect();
            let hits = preds.iter().zip(&captions).filter(|(p, c)| caption_pose(p) == **c).count();
            report.caption_consistency = Some(hits as f64 / nf);
            if opts.with_recall && n > DEFAULT_KS[DEFAULT_KS.len() - 1] {
                let real: Vec<PoseParams> = targets.iter().map(|t| (*t).clone()).collect();
                let model = train_retrieval(&captions, &real, vocab, &opts.retrieval, opts.retrieval_seed)?;
                let generated: Vec<PoseParams> = preds.iter().map(|p| (*p).clone()).collect();
                for dir in [Direction::TextToPose, Direction::PoseToText] {
                    for (k, v) in recall_at_k(&model, &captions, &generated, dir, &DEFAULT_KS)? {
                        report.recall.insert(recall_key(dir, k), v);
                    }
                }
            }
        }
        Task::Spg => {
            let hits = preds.iter().zip(&targets).filter(|(p, t)| activity_of(p) == activity_of(t)).count();
            report.caption_consistency = Some(hits as f64 / nf);
        }
        Task::Rpe => {
            let mut hits = 0;
            for (r, p) in records.iter().zip(&preds) {
                let scene = r
                    .scene
                    .as_ref()
                    .ok_or_else(|| Error::InvalidRecord("rpe record without its scene".into()))?;
                let matches = scene.matches();
                let target = matches[0];
                let own = mpjre(p, &scene.persons[target].pose);
                let closest = scene
                    .persons
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != target)
                    .all(|(_, other)| own < mpjre(p, &other.pose));
                if closest {
                    hits += 1;
                }
            }
            report.rpe_accuracy = Some(hits as f64 / nf);
        }
        Task::PoseEst => {}
    }
    report.validate()?;
    Ok(report)
}

/// Root-aligned joint error of always answering `mean`, the blind baseline
/// for observation tasks.
pub fn constant_pose_mpjpe(records: &[ChatRecord], mean: &PoseParams) -> Result<f64> {
    let tree = KinematicTree::default_skeleton();
    let jm = forward_kinematics(mean, &tree);
    let mut sum = 0.0;
    let mut n = 0;
    for r in records {
        if let Some(t) = &r.target_pose {
            sum += mpjpe(&jm, &forward_kinematics(t, &tree))?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(sum / n as f64)
}

/// Chordal mean of the target poses: per joint, the rotation nearest the
/// average matrix.
pub fn mean_pose(records: &[ChatRecord]) -> Result<PoseParams> {
    let poses: Vec<&PoseParams> = records.iter().filter_map(|r| r.target_pose.as_ref()).collect();
    if poses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rots = Vec::with_capacity(crate::rotmath::NUM_JOINTS);
    for j in 0..crate::rotmath::NUM_JOINTS {
        let mut m = nalgebra::Matrix3::zeros();
        for p in &poses {
            m += p.rotation(j).matrix();
        }
        let svd = m.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let mut d = nalgebra::Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        rots.push(crate::rotmath::RotMat::from_matrix_unchecked(u * d * v_t));
    }
    PoseParams::new(rots)
}
