//! Observation pathway: people in a scene are projected through a pinhole
//! camera, perturbed with 2D noise and embedded as `d_obs`-dimensional
//! vectors, one per joint.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{forward_kinematics, KinematicTree};
use crate::data::caption::{nearest_prototype, PROTOTYPES};
use crate::error::{Error, Result};
use crate::rotmath::{PoseParams, NUM_JOINTS};

pub const DEFAULT_D_OBS: usize = 16;
pub const DEFAULT_NOISE_STD: f64 = 0.002;
const EMBEDDING_SEED: u64 = 0x0b5e_7a11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    FarLeft,
    Left,
    Center,
    Right,
    FarRight,
}

impl Placement {
    pub const ALL: [Placement; 5] = [
        Placement::FarLeft,
        Placement::Left,
        Placement::Center,
        Placement::Right,
        Placement::FarRight,
    ];

    /// Lateral offset of the person's root, meters.
    pub fn offset(self) -> f64 {
        match self {
            Placement::FarLeft => -1.2,
            Placement::Left => -0.6,
            Placement::Center => 0.0,
            Placement::Right => 0.6,
            Placement::FarRight => 1.2,
        }
    }

    pub fn words(self) -> &'static str {
        match self {
            Placement::FarLeft => "on the far left",
            Placement::Left => "on the left",
            Placement::Center => "in the center",
            Placement::Right => "on the right",
            Placement::FarRight => "on the far right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeLabel {
    Short,
    Medium,
    Tall,
}

impl SizeLabel {
    pub const ALL: [SizeLabel; 3] = [SizeLabel::Short, SizeLabel::Medium, SizeLabel::Tall];

    pub fn scale(self) -> f64 {
        match self {
            SizeLabel::Short => 0.9,
            SizeLabel::Medium => 1.0,
            SizeLabel::Tall => 1.1,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            SizeLabel::Short => "short",
            SizeLabel::Medium => "medium height",
            SizeLabel::Tall => "tall",
        }
    }
}

/// A tag from the fixed attribute vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Placement(Placement),
    Size(SizeLabel),
    /// Index into the activity prototype table.
    Activity(usize),
}

impl Attribute {
    /// Noun phrase singling out a person with this attribute.
    pub fn query_text(&self) -> String {
        match self {
            Attribute::Placement(p) => format!("the person {}", p.words()),
            Attribute::Size(SizeLabel::Medium) => "the person of medium height".to_string(),
            Attribute::Size(s) => format!("the {} person", s.word()),
            Attribute::Activity(i) => PROTOTYPES[*i].reference.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributedPerson {
    pub pose: PoseParams,
    pub attributes: Vec<Attribute>,
}

impl AttributedPerson {
    /// Tags a pose with its placement, size and activity.
    pub fn new(pose: PoseParams, placement: Placement, size: SizeLabel) -> Self {
        let activity = nearest_prototype(&pose);
        AttributedPerson {
            pose,
            attributes: vec![
                Attribute::Placement(placement),
                Attribute::Size(size),
                Attribute::Activity(activity),
            ],
        }
    }

    pub fn placement(&self) -> Placement {
        self.attributes
            .iter()
            .find_map(|a| match a {
                Attribute::Placement(p) => Some(*p),
                _ => None,
            })
            .unwrap_or(Placement::Center)
    }

    pub fn size(&self) -> SizeLabel {
        self.attributes
            .iter()
            .find_map(|a| match a {
                Attribute::Size(s) => Some(*s),
                _ => None,
            })
            .unwrap_or(SizeLabel::Medium)
    }

    pub fn has(&self, attribute: &Attribute) -> bool {
        self.attributes.contains(attribute)
    }
}

/// Pinhole camera at the origin looking down +z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub depth: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            focal: 1.0,
            depth: 3.0,
        }
    }
}

impl Camera {
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        [self.focal * p.x / p.z, self.focal * p.y / p.z]
    }
}

/// Embedded observation of one or more persons, 24 vectors per person.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeq {
    pub person_count: usize,
    pub d_obs: usize,
    /// Row-major `(person_count * 24) x d_obs`.
    pub vectors: Vec<f64>,
}

impl ObservationSeq {
    pub fn len(&self) -> usize {
        if self.d_obs == 0 {
            0
        } else {
            self.vectors.len() / self.d_obs
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d_obs..(i + 1) * self.d_obs]
    }

    pub fn validate(&self) -> Result<()> {
        if self.person_count == 0 || self.d_obs == 0 {
            return Err(Error::InvalidRecord("empty observation".into()));
        }
        if self.vectors.len() != self.person_count * NUM_JOINTS * self.d_obs {
            return Err(Error::InvalidRecord(format!(
                "observation has {} values, expected {} persons x {NUM_JOINTS} x {}",
                self.vectors.len(),
                self.person_count,
                self.d_obs
            )));
        }
        if !self.vectors.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRecord("non-finite observation entry".into()));
        }
        Ok(())
    }

    /// Zeroes a seeded random subset of `fraction` of the joint vectors.
    pub fn masked(&self, fraction: f64, seed: u64) -> ObservationSeq {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng);
        let count = (fraction * self.len() as f64).round() as usize;
        let mut out = self.clone();
        for &i in &idx[..count.min(idx.len())] {
            out.vectors[i * self.d_obs..(i + 1) * self.d_obs].fill(0.0);
        }
        out
    }
}

/// Fixed linear map from an image point to `d_obs` dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEmbedding {
    d_obs: usize,
    /// Row-major `2 x d_obs`.
    weights: Vec<f64>,
}

impl PointEmbedding {
    pub fn new(d_obs: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let weights = (0..2 * d_obs).map(|_| normal.sample(&mut rng)).collect();
        PointEmbedding { d_obs, weights }
    }

    pub fn embed(&self, point: [f64; 2], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.d_obs) {
            *o = point[0] * self.weights[k] + point[1] * self.weights[self.d_obs + k];
        }
    }
}

/// Projected (noise-free) image points of one person's joints.
pub fn project_person(person: &AttributedPerson, tree: &KinematicTree, camera: &Camera) -> Vec<[f64; 2]> {
    let scaled = tree.scaled(person.size().scale());
    let joints = forward_kinematics(&person.pose, &scaled);
    let origin = Vector3::new(person.placement().offset(), 0.0, camera.depth);
    joints
        .positions
        .iter()
        .map(|p| camera.project(&(p + origin)))
        .collect()
}

pub fn observe(
    persons: &[AttributedPerson],
    tree: &KinematicTree,
    camera: &Camera,
    noise_std: f64,
    d_obs: usize,
    seed: u64,
) -> Result<ObservationSeq> {
    if persons.is_empty() {
        return Err(Error::Config("observation needs at least one person".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let embedding = PointEmbedding::new(d_obs);
    let mut vectors = vec![0.0; persons.len() * NUM_JOINTS * d_obs];
    let mut slots = vectors.chunks_exact_mut(d_obs);
    for person in persons {
        for point in project_person(person, tree, camera) {
            let noisy = if noise_std > 0.0 {
                [point[0] + noise.sample(&mut rng), point[1] + noise.sample(&mut rng)]
            } else {
                point
            };
            embedding.embed(noisy, slots.next().expect("sized above"));
        }
    }
    Ok(ObservationSeq {
        person_count: persons.len(),
        d_obs,
        vectors,
    })
}
