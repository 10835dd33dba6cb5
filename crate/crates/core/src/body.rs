//! Joints-only kinematic body model.
//!
//! A [`KinematicTree`] holds the 24-joint skeleton (parents plus rest offsets);
//! [`forward_kinematics`] poses it into world-space joint positions.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::rotmath::{PoseParams, NUM_JOINTS};

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Parent of each joint in the standard 24-joint body layout.
pub const DEFAULT_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Body height used to scale the default skeleton, meters.
pub const DEFAULT_HEIGHT: f64 = 1.7;

// Segment offsets as fractions of body height, for the left side and the
// midline. Right-side joints mirror x. y is up, x points to the body's left,
// z points forward. The rest pose is the T-pose.
const SEGMENT_FRACTIONS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.035, -0.053, 0.0],
    [-0.035, -0.053, 0.0],
    [0.0, 0.065, -0.01],
    [0.0, -0.225, 0.0],
    [0.0, -0.225, 0.0],
    [0.0, 0.077, 0.0],
    [0.0, -0.236, -0.01],
    [0.0, -0.236, -0.01],
    [0.0, 0.03, 0.0],
    [0.0, -0.035, 0.07],
    [0.0, -0.035, 0.07],
    [0.0, 0.13, 0.0],
    [0.04, 0.07, 0.0],
    [-0.04, 0.07, 0.0],
    [0.0, 0.055, 0.02],
    [0.06, 0.018, 0.0],
    [-0.06, 0.018, 0.0],
    [0.153, 0.0, 0.0],
    [-0.153, 0.0, 0.0],
    [0.147, 0.0, 0.0],
    [-0.147, 0.0, 0.0],
    [0.047, 0.0, 0.0],
    [-0.047, 0.0, 0.0],
];

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    parent: Vec<Option<usize>>,
    rest_offset: Vec<Vector3<f64>>,
}

impl KinematicTree {
    pub fn new(parent: Vec<Option<usize>>, rest_offset: Vec<Vector3<f64>>) -> Result<Self> {
        if parent.len() != NUM_JOINTS || rest_offset.len() != NUM_JOINTS {
            return Err(Error::SizeMismatch(format!(
                "tree has {} parents and {} offsets, expected {NUM_JOINTS}",
                parent.len(),
                rest_offset.len()
            )));
        }
        if parent[0].is_some() {
            return Err(Error::Topology {
                joint: 0,
                message: "root must not have a parent".into(),
            });
        }
        for (j, p) in parent.iter().enumerate().skip(1) {
            match p {
                None => {
                    return Err(Error::Topology {
                        joint: j,
                        message: "second root".into(),
                    })
                }
                Some(p) if *p >= j => {
                    return Err(Error::Topology {
                        joint: j,
                        message: format!("parent {p} is not an earlier joint"),
                    })
                }
                _ => {}
            }
        }
        if let Some(j) = rest_offset.iter().position(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(Error::Topology {
                joint: j,
                message: "non-finite offset".into(),
            });
        }
        if rest_offset.iter().skip(1).all(|o| *o == Vector3::zeros()) {
            return Err(Error::Topology {
                joint: 1,
                message: "all non-root offsets are zero".into(),
            });
        }
        Ok(KinematicTree {
            parent,
            rest_offset,
        })
    }

    /// Synthetic human skeleton of [`DEFAULT_HEIGHT`] in the T-pose.
    pub fn default_skeleton() -> Self {
        Self::scaled_skeleton(DEFAULT_HEIGHT)
    }

    pub fn scaled_skeleton(height: f64) -> Self {
        let offsets = SEGMENT_FRACTIONS
            .iter()
            .map(|f| Vector3::new(f[0], f[1], f[2]) * height)
            .collect();
        KinematicTree {
            parent: DEFAULT_PARENTS.to_vec(),
            rest_offset: offsets,
        }
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn rest_offset(&self, joint: usize) -> &Vector3<f64> {
        &self.rest_offset[joint]
    }

    /// Uniformly scaled copy.
    pub fn scaled(&self, factor: f64) -> KinematicTree {
        KinematicTree {
            parent: self.parent.clone(),
            rest_offset: self.rest_offset.iter().map(|o| o * factor).collect(),
        }
    }

    /// Rest-pose joint positions (cumulative offsets).
    pub fn rest_positions(&self) -> JointSet {
        let mut positions = vec![Vector3::zeros(); NUM_JOINTS];
        positions[0] = self.rest_offset[0];
        for j in 1..NUM_JOINTS {
            let p = self.parent[j].expect("validated tree");
            positions[j] = positions[p] + self.rest_offset[j];
        }
        JointSet { positions }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("joints {NUM_JOINTS}\n");
        for (j, (p, o)) in self.parent.iter().zip(&self.rest_offset).enumerate() {
            let p = p.map_or(-1, |p| p as i64);
            // `{}` on f64 prints the shortest decimal that round-trips.
            let _ = writeln!(out, "{j} {p} {} {} {}", o.x, o.y, o.z);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (n, header) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
        let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["joints", c] => c
                .parse::<usize>()
                .map_err(|e| Error::parse(n, format!("bad joint count: {e}")))?,
            _ => return Err(Error::parse(n, "expected header `joints 24`")),
        };
        if count != NUM_JOINTS {
            return Err(Error::parse(n, format!("expected {NUM_JOINTS} joints, got {count}")));
        }

        let mut parent = vec![None; NUM_JOINTS];
        let mut offset = vec![Vector3::zeros(); NUM_JOINTS];
        let mut seen = [false; NUM_JOINTS];
        for (n, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::parse(n, "expected `index parent ox oy oz`"));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|e| Error::parse(n, format!("bad index: {e}")))?;
            if idx >= NUM_JOINTS || seen[idx] {
                return Err(Error::parse(n, format!("bad or repeated joint index {idx}")));
            }
            let p: i64 = fields[1]
                .parse()
                .map_err(|e| Error::parse(n, format!("bad parent: {e}")))?;
            let mut xyz = [0.0; 3];
            for (k, f) in fields[2..].iter().enumerate() {
                xyz[k] = f
                    .parse()
                    .map_err(|e| Error::parse(n, format!("bad offset: {e}")))?;
            }
            seen[idx] = true;
            parent[idx] = if p < 0 { None } else { Some(p as usize) };
            offset[idx] = Vector3::new(xyz[0], xyz[1], xyz[2]);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::parse(0, format!("joint {missing} missing")));
        }
        KinematicTree::new(parent, offset)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// World-space joint positions, meters.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSet {
    pub positions: Vec<Vector3<f64>>,
}

impl JointSet {
    pub fn translated(&self, t: &Vector3<f64>) -> JointSet {
        JointSet {
            positions: self.positions.iter().map(|p| p + t).collect(),
        }
    }

    pub fn transformed(&self, rotation: &Matrix3<f64>, scale: f64, t: &Vector3<f64>) -> JointSet {
        JointSet {
            positions: self
                .positions
                .iter()
                .map(|p| rotation * p * scale + t)
                .collect(),
        }
    }
}

pub fn forward_kinematics(pose: &PoseParams, tree: &KinematicTree) -> JointSet {
    let mut global = vec![Matrix3::identity(); NUM_JOINTS];
    let mut positions = vec![Vector3::zeros(); NUM_JOINTS];
    global[0] = *pose.rotation(0).matrix();
    positions[0] = tree.rest_offset[0];
    for j in 1..NUM_JOINTS {
        let p = tree.parent[j].expect("validated tree");
        positions[j] = positions[p] + global[p] * tree.rest_offset[j];
        global[j] = global[p] * pose.rotation(j).matrix();
    }
    JointSet { positions }
}
