//! Chat records, their construction from templates, and the line-delimited
//! dataset and pose file formats.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::KinematicTree;
use crate::data::caption::{activity_of, caption_pose};
use crate::data::observe::{
    observe, Attribute, AttributedPerson, Camera, ObservationSeq, Placement, SizeLabel,
    DEFAULT_D_OBS, DEFAULT_NOISE_STD,
};
use crate::data::templates::{Templates, DESCRIPTION_SLOT, POSE_PLACEHOLDER};
use crate::error::{Error, Result};
use crate::rotmath::{PoseParams, NUM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Text2pose,
    Obs2pose,
    Rpe,
    Vqa,
}

impl RecordKind {
    pub fn has_observation(self) -> bool {
        matches!(self, RecordKind::Obs2pose | RecordKind::Rpe)
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::Text2pose => "text2pose",
            RecordKind::Obs2pose => "obs2pose",
            RecordKind::Rpe => "rpe",
            RecordKind::Vqa => "vqa",
        }
    }
}

/// One person of a multi-person scene, kept so queries can be re-resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePerson {
    pub attributes: Vec<Attribute>,
    pub pose: PoseParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub persons: Vec<ScenePerson>,
    pub query: Attribute,
}

impl Scene {
    /// Indices of the persons carrying the queried attribute.
    pub fn matches(&self) -> Vec<usize> {
        self.persons
            .iter()
            .enumerate()
            .filter(|(_, p)| p.attributes.contains(&self.query))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatRecord {
    pub kind: RecordKind,
    pub question: String,
    pub answer: String,
    pub target_pose: Option<PoseParams>,
    pub observation: Option<ObservationSeq>,
    pub seed: u64,
    pub scene: Option<Scene>,
}

impl ChatRecord {
    pub fn validate(&self) -> Result<()> {
        let placeholders = self.answer.matches(POSE_PLACEHOLDER).count();
        if placeholders > 1 {
            return Err(Error::InvalidRecord(format!("{placeholders} pose placeholders in answer")));
        }
        if (placeholders == 1) != self.target_pose.is_some() {
            return Err(Error::InvalidRecord(
                "answer must contain a pose placeholder iff a target pose is present".into(),
            ));
        }
        if self.kind.has_observation() != self.observation.is_some() {
            return Err(Error::InvalidRecord(format!(
                "{} record observation presence is wrong",
                self.kind.name()
            )));
        }
        if let Some(obs) = &self.observation {
            obs.validate()?;
        }
        if let Some(scene) = &self.scene {
            if scene.matches().len() != 1 {
                return Err(Error::InvalidRecord("scene query is ambiguous".into()));
            }
        }
        Ok(())
    }

    pub fn has_pose(&self) -> bool {
        self.target_pose.is_some()
    }
}

/// Builds records from poses and templates. All randomness comes from the
/// per-record seed.
#[derive(Clone, Debug)]
pub struct RecordBuilder {
    pub templates: Templates,
    pub tree: KinematicTree,
    pub camera: Camera,
    pub noise_std: f64,
    pub d_obs: usize,
}

impl Default for RecordBuilder {
    fn default() -> Self {
        RecordBuilder {
            templates: Templates::default(),
            tree: KinematicTree::default_skeleton(),
            camera: Camera::default(),
            noise_std: DEFAULT_NOISE_STD,
            d_obs: DEFAULT_D_OBS,
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [String]) -> Result<&'a str> {
    if items.is_empty() {
        return Err(Error::Config("empty template list".into()));
    }
    Ok(&items[rng.random_range(0..items.len())])
}

impl RecordBuilder {
    /// Text-to-pose record whose question embeds the explicit caption.
    pub fn text2pose(&self, pose: &PoseParams, seed: u64) -> Result<ChatRecord> {
        let caption = caption_pose(pose);
        self.described(pose, &caption, &self.templates.text_questions, seed)
    }

    /// Speculative record: the question carries the activity sentence only.
    pub fn spg(&self, pose: &PoseParams, seed: u64) -> Result<ChatRecord> {
        self.described(pose, activity_of(pose), &self.templates.implicit_questions, seed)
    }

    fn described(
        &self,
        pose: &PoseParams,
        description: &str,
        questions: &[String],
        seed: u64,
    ) -> Result<ChatRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let question = pick(&mut rng, questions)?.replace(DESCRIPTION_SLOT, description);
        let answer = pick(&mut rng, &self.templates.pose_answers)?.to_string();
        Ok(ChatRecord {
            kind: RecordKind::Text2pose,
            question,
            answer,
            target_pose: Some(pose.clone()),
            observation: None,
            seed,
            scene: None,
        })
    }

    /// Single centered person observed through the camera.
    pub fn obs2pose(&self, pose: &PoseParams, seed: u64) -> Result<ChatRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let question = pick(&mut rng, &self.templates.obs_questions)?.to_string();
        let answer = pick(&mut rng, &self.templates.pose_answers)?.to_string();
        let person = AttributedPerson::new(pose.clone(), Placement::Center, SizeLabel::Medium);
        let observation = observe(
            &[person],
            &self.tree,
            &self.camera,
            self.noise_std,
            self.d_obs,
            rng.next_u64(),
        )?;
        Ok(ChatRecord {
            kind: RecordKind::Obs2pose,
            question,
            answer,
            target_pose: Some(pose.clone()),
            observation: Some(observation),
            seed,
            scene: None,
        })
    }

    /// Multi-person record; the target is the one person matching `query`.
    pub fn rpe(&self, persons: &[AttributedPerson], query: Attribute, seed: u64) -> Result<ChatRecord> {
        let matching: Vec<&AttributedPerson> = persons.iter().filter(|p| p.has(&query)).collect();
        if matching.len() != 1 {
            return Err(Error::AmbiguousQuery {
                query: query.query_text(),
                matches: matching.len(),
            });
        }
        let target = matching[0].pose.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let question =
            pick(&mut rng, &self.templates.scene_questions)?.replace(DESCRIPTION_SLOT, &query.query_text());
        let answer = pick(&mut rng, &self.templates.pose_answers)?.to_string();
        let observation = observe(
            persons,
            &self.tree,
            &self.camera,
            self.noise_std,
            self.d_obs,
            rng.next_u64(),
        )?;
        Ok(ChatRecord {
            kind: RecordKind::Rpe,
            question,
            answer,
            target_pose: Some(target),
            observation: Some(observation),
            seed,
            scene: Some(Scene {
                persons: persons
                    .iter()
                    .map(|p| ScenePerson {
                        attributes: p.attributes.clone(),
                        pose: p.pose.clone(),
                    })
                    .collect(),
                query,
            }),
        })
    }

    pub fn vqa(&self, question: &str, answer: &str, seed: u64) -> ChatRecord {
        ChatRecord {
            kind: RecordKind::Vqa,
            question: question.to_string(),
            answer: answer.to_string(),
            target_pose: None,
            observation: None,
            seed,
            scene: None,
        }
    }
}

// ---- file formats ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ScenePersonLine {
    attributes: Vec<Attribute>,
    pose: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SceneLine {
    persons: Vec<ScenePersonLine>,
    query: Attribute,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    kind: RecordKind,
    question: String,
    answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_pose: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation: Option<ObservationSeq>,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene: Option<SceneLine>,
}

impl ChatRecord {
    pub fn to_json_line(&self) -> String {
        let line = RecordLine {
            kind: self.kind,
            question: self.question.clone(),
            answer: self.answer.clone(),
            target_pose: self.target_pose.as_ref().map(PoseParams::to_6d),
            observation: self.observation.clone(),
            seed: self.seed,
            scene: self.scene.as_ref().map(|s| SceneLine {
                persons: s
                    .persons
                    .iter()
                    .map(|p| ScenePersonLine {
                        attributes: p.attributes.clone(),
                        pose: p.pose.to_6d(),
                    })
                    .collect(),
                query: s.query,
            }),
        };
        serde_json::to_string(&line).expect("records serialize")
    }

    pub fn from_json_line(text: &str) -> Result<ChatRecord> {
        let line: RecordLine =
            serde_json::from_str(text).map_err(|e| Error::InvalidRecord(e.to_string()))?;
        let scene = match line.scene {
            Some(s) => Some(Scene {
                persons: s
                    .persons
                    .into_iter()
                    .map(|p| {
                        Ok(ScenePerson {
                            attributes: p.attributes,
                            pose: PoseParams::from_6d_stored(&p.pose)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
                query: s.query,
            }),
            None => None,
        };
        let record = ChatRecord {
            kind: line.kind,
            question: line.question,
            answer: line.answer,
            target_pose: line.target_pose.as_deref().map(PoseParams::from_6d_stored).transpose()?,
            observation: line.observation,
            seed: line.seed,
            scene,
        };
        record.validate()?;
        Ok(record)
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[ChatRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        writeln!(out, "{}", r.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ChatRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = ChatRecord::from_json_line(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

/// Pose file: header `poses N 144`, then one line of 144 6D values per pose.
pub fn poses_to_text(poses: &[PoseParams]) -> String {
    let mut out = format!("poses {} {}\n", poses.len(), NUM_JOINTS * 6);
    for p in poses {
        let values: Vec<String> = p.to_6d().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out
}

pub fn parse_poses(text: &str) -> Result<Vec<PoseParams>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (n, header) = lines.next().ok_or_else(|| Error::parse(1, "empty pose file"))?;
    let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["poses", count, "144"] => count
            .parse::<usize>()
            .map_err(|e| Error::parse(n + 1, e.to_string()))?,
        _ => return Err(Error::parse(n + 1, "expected header `poses N 144`")),
    };
    let mut poses = Vec::with_capacity(count);
    for (n, line) in lines {
        let values = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(n + 1, e.to_string()))?;
        poses.push(PoseParams::from_6d_stored(&values).map_err(|e| Error::parse(n + 1, e.to_string()))?);
    }
    if poses.len() != count {
        return Err(Error::parse(0, format!("header says {count} poses, found {}", poses.len())));
    }
    Ok(poses)
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[PoseParams]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, poses_to_text(poses)).map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<PoseParams>> {
    let path = path.as_ref();
    parse_poses(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::prior::{sample_pose, PosePrior};
    use crate::data::templates::OBS_PLACEHOLDER;

    fn pose(seed: u64) -> PoseParams {
        sample_pose(seed, &PosePrior::default_prior())
    }

    #[test]
    fn text2pose_embeds_caption() {
        let b = RecordBuilder::default();
        let p = pose(8);
        let r = b.text2pose(&p, 42).unwrap();
        assert!(r.question.contains(&caption_pose(&p)));
        assert_eq!(r.answer.matches(POSE_PLACEHOLDER).count(), 1);
        assert_eq!(r, b.text2pose(&p, 42).unwrap());
        r.validate().unwrap();
    }

    #[test]
    fn obs2pose_construction() {
        let b = RecordBuilder::default();
        let p = pose(3);
        let r = b.obs2pose(&p, 1).unwrap();
        assert_eq!(r.observation.as_ref().unwrap().len(), 24);
        assert_eq!(r.target_pose.as_ref(), Some(&p));
        assert!(r.question.contains(OBS_PLACEHOLDER));
        r.validate().unwrap();
    }

    #[test]
    fn ambiguous_scene_query() {
        let b = RecordBuilder::default();
        let persons = [
            AttributedPerson::new(pose(1), Placement::Left, SizeLabel::Tall),
            AttributedPerson::new(pose(2), Placement::Right, SizeLabel::Tall),
        ];
        let err = b.rpe(&persons, Attribute::Size(SizeLabel::Tall), 0).unwrap_err();
        assert!(matches!(err, Error::AmbiguousQuery { matches: 2, .. }));
        let err = b.rpe(&persons, Attribute::Size(SizeLabel::Short), 0).unwrap_err();
        assert!(matches!(err, Error::AmbiguousQuery { matches: 0, .. }));
        let ok = b.rpe(&persons, Attribute::Placement(Placement::Right), 0).unwrap();
        assert_eq!(ok.target_pose.as_ref(), Some(&persons[1].pose));
        assert_eq!(ok.observation.as_ref().unwrap().len(), 48);
    }

    #[test]
    fn invariants_enforced() {
        let b = RecordBuilder::default();
        let mut r = b.text2pose(&pose(1), 1).unwrap();
        r.target_pose = None;
        assert!(r.validate().is_err());
        let mut r = b.vqa("what?", "that.", 0);
        r.observation = b.obs2pose(&pose(1), 1).unwrap().observation;
        assert!(r.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let b = RecordBuilder::default();
        let persons = [
            AttributedPerson::new(pose(1), Placement::Left, SizeLabel::Short),
            AttributedPerson::new(pose(2), Placement::Center, SizeLabel::Tall),
            AttributedPerson::new(pose(3), Placement::FarRight, SizeLabel::Medium),
        ];
        for r in [
            b.text2pose(&pose(5), 1).unwrap(),
            b.obs2pose(&pose(6), 2).unwrap(),
            b.rpe(&persons, Attribute::Size(SizeLabel::Tall), 3).unwrap(),
            b.vqa("What is one plus one?", "one plus one is two.", 4),
        ] {
            let line = r.to_json_line();
            let back = ChatRecord::from_json_line(&line).unwrap();
            assert_eq!(back.to_json_line(), line);
            assert_eq!(back.question, r.question);
            assert_eq!(back.kind, r.kind);
        }
    }

    #[test]
    fn pose_file_round_trip() {
        let poses: Vec<PoseParams> = (0..3).map(pose).collect();
        let text = poses_to_text(&poses);
        assert!(text.starts_with("poses 3 144\n"));
        let back = parse_poses(&text).unwrap();
        assert_eq!(poses_to_text(&back), text);
        assert!(parse_poses("poses 2 144\n1 2 3\n").is_err());
    }
}
