//! Rule-based captioning: explicit joint-level descriptions and implicit
//! activity sentences.

use crate::data::prior::{articulated_pose, ARTICULATIONS};
use crate::rotmath::{geodesic_distance, PoseParams, NUM_JOINTS};

/// Lower edges of the articulation levels, radians. Below the first edge a
/// joint is not mentioned.
pub const LEVEL_EDGES: [f64; 5] = [0.25, 0.5, 0.75, 1.0, 1.25];
pub const LEVEL_WORDS: [&str; 5] = ["slightly", "partly", "halfway", "mostly", "fully"];

pub const NEUTRAL_CAPTION: &str = "the person stands in a neutral pose";

/// Level index per articulation (0 = not mentioned, 1..=5 for the words).
pub fn articulation_levels(pose: &PoseParams) -> [usize; 8] {
    let mut levels = [0; 8];
    for (level, a) in levels.iter_mut().zip(&ARTICULATIONS) {
        let amount = a.amount(pose);
        *level = LEVEL_EDGES.iter().take_while(|edge| amount >= **edge).count();
    }
    levels
}

pub fn phrase(articulation: usize, level: usize) -> String {
    let a = &ARTICULATIONS[articulation];
    format!("the {} is {} {}", a.part, LEVEL_WORDS[level - 1], a.verb)
}

/// Explicit description. Phrases appear in articulation-table order.
pub fn caption_pose(pose: &PoseParams) -> String {
    let phrases: Vec<String> = articulation_levels(pose)
        .iter()
        .enumerate()
        .filter(|(_, level)| **level > 0)
        .map(|(i, level)| phrase(i, *level))
        .collect();
    if phrases.is_empty() {
        NEUTRAL_CAPTION.to_string()
    } else {
        phrases.join(", ")
    }
}

/// Representative pose for an activity, described by articulation amounts in
/// [`ARTICULATIONS`] order.
#[derive(Clone, Copy, Debug)]
pub struct Prototype {
    pub label: &'static str,
    pub sentence: &'static str,
    /// Noun phrase used to single the person out in a scene.
    pub reference: &'static str,
    pub amounts: [f64; 8],
}

impl Prototype {
    pub fn pose(&self) -> PoseParams {
        articulated_pose(&self.amounts)
    }
}

pub const PROTOTYPES: [Prototype; 9] = [
    Prototype {
        label: "t-pose",
        sentence: "the person holds both arms straight out to the sides in a t-pose",
        reference: "the person holding both arms out to the sides",
        amounts: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    },
    Prototype {
        label: "attention",
        sentence: "the person stands at attention with the arms resting at the sides",
        reference: "the person standing at attention",
        amounts: [1.5, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    },
    Prototype {
        label: "sitting",
        sentence: "the person is sitting on a chair",
        reference: "the person sitting on a chair",
        amounts: [1.5, 1.5, 0.5, 0.5, 1.5, 1.5, 1.5, 1.5],
    },
    Prototype {
        label: "squatting",
        sentence: "the person is squatting down low",
        reference: "the person squatting down",
        amounts: [0.5, 0.5, 0.0, 0.0, 1.25, 1.25, 1.5, 1.5],
    },
    Prototype {
        label: "flexing",
        sentence: "the person is showing off the biceps",
        reference: "the person showing off the biceps",
        amounts: [0.0, 0.0, 1.5, 1.5, 0.0, 0.0, 0.0, 0.0],
    },
    Prototype {
        label: "running",
        sentence: "the person is running down the street",
        reference: "the person who is running",
        amounts: [1.2, 1.2, 1.5, 1.5, 1.0, 0.0, 0.3, 1.2],
    },
    Prototype {
        label: "kicking",
        sentence: "the person is kicking a ball",
        reference: "the person kicking a ball",
        amounts: [0.75, 0.75, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0],
    },
    Prototype {
        label: "waving",
        sentence: "the person is waving hello to a friend",
        reference: "the person who is waving",
        amounts: [1.5, 0.0, 0.0, 1.25, 0.0, 0.0, 0.0, 0.0],
    },
    Prototype {
        label: "marching",
        sentence: "the person is marching in place",
        reference: "the person marching in place",
        amounts: [1.5, 1.5, 0.0, 0.0, 0.75, 0.0, 0.75, 0.0],
    },
];

/// Distances within this margin of the minimum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

pub fn mean_joint_distance(a: &PoseParams, b: &PoseParams) -> f64 {
    (0..NUM_JOINTS)
        .map(|j| geodesic_distance(a.rotation(j), b.rotation(j)))
        .sum::<f64>()
        / NUM_JOINTS as f64
}

/// Index of the nearest prototype; ties go to the lowest index.
pub fn nearest_prototype(pose: &PoseParams) -> usize {
    let distances: Vec<f64> = PROTOTYPES
        .iter()
        .map(|p| mean_joint_distance(pose, &p.pose()))
        .collect();
    let best = distances.iter().cloned().fold(f64::INFINITY, f64::min);
    distances
        .iter()
        .position(|d| *d <= best + TIE_TOLERANCE)
        .expect("prototype table is nonempty")
}

/// Implicit description: the activity sentence of the nearest prototype.
pub fn activity_of(pose: &PoseParams) -> &'static str {
    PROTOTYPES[nearest_prototype(pose)].sentence
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::prior::{sample_pose, PosePrior};
    use crate::rotmath::AxisAngle;

    #[test]
    fn identity_is_neutral() {
        assert_eq!(caption_pose(&PoseParams::identity()), NEUTRAL_CAPTION);
    }

    #[test]
    fn single_elbow_phrase() {
        let mut amounts = [0.0; 8];
        amounts[2] = 1.5;
        let caption = caption_pose(&articulated_pose(&amounts));
        assert_eq!(caption, "the left elbow is fully bent");
        for (i, a) in ARTICULATIONS.iter().enumerate() {
            if i != 2 {
                assert!(!caption.contains(a.part), "{caption}");
            }
        }
    }

    #[test]
    fn levels_follow_edges() {
        let mut amounts = [0.0; 8];
        amounts[6] = 0.6;
        amounts[0] = 1.05;
        assert_eq!(
            caption_pose(&articulated_pose(&amounts)),
            "the left arm is mostly lowered, the left knee is partly bent"
        );
    }

    #[test]
    fn caption_is_pure() {
        let pose = sample_pose(3, &PosePrior::default_prior());
        let first = caption_pose(&pose);
        for _ in 0..100 {
            assert_eq!(caption_pose(&pose), first);
        }
    }

    #[test]
    fn same_cell_same_caption() {
        // Moving inside a level cell never changes the caption.
        let base = [0.3, 0.8, 1.3, 0.1, 0.55, 0.9, 1.1, 0.0];
        let shifted = [0.45, 0.95, 1.45, 0.2, 0.7, 0.99, 1.2, 0.24];
        assert_eq!(
            caption_pose(&articulated_pose(&base)),
            caption_pose(&articulated_pose(&shifted))
        );
    }

    #[test]
    fn prototype_matches_itself() {
        for (i, p) in PROTOTYPES.iter().enumerate() {
            assert_eq!(nearest_prototype(&p.pose()), i, "{}", p.label);
        }
        assert_eq!(activity_of(&PROTOTYPES[0].pose()), PROTOTYPES[0].sentence);
    }

    #[test]
    fn perturbed_t_pose_stays_t_pose() {
        let mut pose = PROTOTYPES[0].pose();
        for j in 0..NUM_JOINTS {
            let axis = [
                AxisAngle::new(0.05, 0.0, 0.0),
                AxisAngle::new(0.0, 0.05, 0.0),
                AxisAngle::new(0.0, 0.0, 0.05),
            ][j % 3];
            let r = pose.rotation(j).compose(&crate::rotmath::axis_angle_to_matrix(&axis));
            pose.set_rotation(j, r);
        }
        // exhaustive check: T-pose is strictly the nearest
        let d: Vec<f64> = PROTOTYPES
            .iter()
            .map(|p| mean_joint_distance(&pose, &p.pose()))
            .collect();
        assert!(d[1..].iter().all(|x| *x > d[0]));
        assert_eq!(activity_of(&pose), PROTOTYPES[0].sentence);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let a = PROTOTYPES[2].amounts;
        let b = PROTOTYPES[5].amounts;
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let pose = articulated_pose(&mid.try_into().unwrap());
        let d2 = mean_joint_distance(&pose, &PROTOTYPES[2].pose());
        let d5 = mean_joint_distance(&pose, &PROTOTYPES[5].pose());
        assert!((d2 - d5).abs() < 1e-12);
        for (i, p) in PROTOTYPES.iter().enumerate() {
            if i != 2 && i != 5 {
                assert!(mean_joint_distance(&pose, &p.pose()) > d2);
            }
        }
        assert_eq!(nearest_prototype(&pose), 2);
    }
}
