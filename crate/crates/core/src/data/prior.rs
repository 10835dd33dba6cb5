//! Pose prior and the articulation table shared by sampling and captioning.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rotmath::{AxisAngle, PoseParams, NUM_JOINTS};

/// One captioned degree of freedom: a joint rotating about a fixed local axis.
/// Positive amounts mean "more flexed" in the phrase's sense.
#[derive(Clone, Copy, Debug)]
pub struct Articulation {
    pub joint: usize,
    pub axis: [f64; 3],
    pub part: &'static str,
    pub verb: &'static str,
}

impl Articulation {
    pub fn axis(&self) -> Vector3<f64> {
        Vector3::new(self.axis[0], self.axis[1], self.axis[2])
    }

    /// Signed rotation amount of this joint about the articulation axis.
    pub fn amount(&self, pose: &PoseParams) -> f64 {
        crate::rotmath::matrix_to_axis_angle(pose.rotation(self.joint))
            .0
            .dot(&self.axis())
    }
}

/// Arms lower toward the body and elbows fold upward in the frontal plane;
/// hips flex forward and knees fold backward.
pub const ARTICULATIONS: [Articulation; 8] = [
    Articulation { joint: 16, axis: [0.0, 0.0, -1.0], part: "left arm", verb: "lowered" },
    Articulation { joint: 17, axis: [0.0, 0.0, 1.0], part: "right arm", verb: "lowered" },
    Articulation { joint: 18, axis: [0.0, 0.0, 1.0], part: "left elbow", verb: "bent" },
    Articulation { joint: 19, axis: [0.0, 0.0, -1.0], part: "right elbow", verb: "bent" },
    Articulation { joint: 1, axis: [-1.0, 0.0, 0.0], part: "left leg", verb: "raised" },
    Articulation { joint: 2, axis: [-1.0, 0.0, 0.0], part: "right leg", verb: "raised" },
    Articulation { joint: 4, axis: [1.0, 0.0, 0.0], part: "left knee", verb: "bent" },
    Articulation { joint: 5, axis: [1.0, 0.0, 0.0], part: "right knee", verb: "bent" },
];

pub const ARTICULATION_RANGE: f64 = 1.5;
pub const JITTER: f64 = 0.005;

/// Per-joint box bounds on the axis-angle vector. Joint 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct PosePrior {
    pub lower: Vec<Vector3<f64>>,
    pub upper: Vec<Vector3<f64>>,
}

impl PosePrior {
    pub fn new(lower: Vec<Vector3<f64>>, upper: Vec<Vector3<f64>>) -> Result<Self> {
        if lower.len() != NUM_JOINTS || upper.len() != NUM_JOINTS {
            return Err(Error::Config(format!("prior needs {NUM_JOINTS} bounds")));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            for k in 0..3 {
                let ok = lo[k] <= hi[k]
                    && lo[k] >= -std::f64::consts::PI
                    && hi[k] <= std::f64::consts::PI;
                if !ok {
                    return Err(Error::Config(format!("joint {j}: invalid bound on axis {k}")));
                }
            }
        }
        Ok(PosePrior { lower, upper })
    }

    /// Small jitter everywhere, plus `[0, 1.5]` rad along each articulation axis.
    pub fn default_prior() -> Self {
        let mut lower = vec![Vector3::repeat(-JITTER); NUM_JOINTS];
        let mut upper = vec![Vector3::repeat(JITTER); NUM_JOINTS];
        for a in &ARTICULATIONS {
            for k in 0..3 {
                if a.axis[k] > 0.0 {
                    lower[a.joint][k] = 0.0;
                    upper[a.joint][k] = ARTICULATION_RANGE;
                } else if a.axis[k] < 0.0 {
                    lower[a.joint][k] = -ARTICULATION_RANGE;
                    upper[a.joint][k] = 0.0;
                }
            }
        }
        PosePrior { lower, upper }
    }

    /// Prior with every bound equal to zero: only the identity pose.
    pub fn zero() -> Self {
        PosePrior {
            lower: vec![Vector3::zeros(); NUM_JOINTS],
            upper: vec![Vector3::zeros(); NUM_JOINTS],
        }
    }

    pub fn contains(&self, aa: &[AxisAngle], tol: f64) -> bool {
        aa.iter().zip(self.lower.iter().zip(&self.upper)).all(|(a, (lo, hi))| {
            (0..3).all(|k| a.0[k] >= lo[k] - tol && a.0[k] <= hi[k] + tol)
        })
    }
}

pub fn sample_pose(seed: u64, prior: &PosePrior) -> PoseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pose_with(&mut rng, prior)
}

pub fn sample_pose_with<R: Rng>(rng: &mut R, prior: &PosePrior) -> PoseParams {
    let aa: Vec<AxisAngle> = prior
        .lower
        .iter()
        .zip(&prior.upper)
        .map(|(lo, hi)| {
            let mut v = Vector3::zeros();
            for k in 0..3 {
                v[k] = if hi[k] > lo[k] {
                    rng.random_range(lo[k]..=hi[k])
                } else {
                    lo[k]
                };
            }
            AxisAngle(v)
        })
        .collect();
    PoseParams::from_axis_angles(&aa).expect("prior has one bound per joint")
}

/// Pose whose articulation amounts are exactly `amounts`, with no jitter.
pub fn articulated_pose(amounts: &[f64; 8]) -> PoseParams {
    let mut aa = vec![AxisAngle::new(0.0, 0.0, 0.0); NUM_JOINTS];
    for (a, amount) in ARTICULATIONS.iter().zip(amounts) {
        aa[a.joint] = AxisAngle(aa[a.joint].0 + a.axis() * *amount);
    }
    PoseParams::from_axis_angles(&aa).expect("24 joints")
}
