use nalgebra::{Matrix3, Vector3};

use crate::body::JointSet;
use crate::data::caption_pose;
use crate::error::{Error, Result};
use crate::rotmath::{geodesic_distance, PoseParams, NUM_JOINTS};

const MM_PER_M: f64 = 1000.0;
const DEGENERATE_SPREAD: f64 = 1e-9;

fn check_joints(a: &JointSet, b: &JointSet) -> Result<()> {
    if a.positions.len() != NUM_JOINTS || b.positions.len() != NUM_JOINTS {
        return Err(Error::SizeMismatch(format!(
            "joint sets have {} and {} joints, expected {NUM_JOINTS}",
            a.positions.len(),
            b.positions.len()
        )));
    }
    Ok(())
}

fn mean_distance_mm(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum();
    sum / a.len() as f64 * MM_PER_M
}

/// Mean joint distance after moving both roots to the origin, millimeters.
pub fn mpjpe(pred: &JointSet, gt: &JointSet) -> Result<f64> {
    check_joints(pred, gt)?;
    let rp = pred.positions[0];
    let rg = gt.positions[0];
    let a: Vec<Vector3<f64>> = pred.positions.iter().map(|p| p - rp).collect();
    let b: Vec<Vector3<f64>> = gt.positions.iter().map(|p| p - rg).collect();
    Ok(mean_distance_mm(&a, &b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Rotation, translation and uniform scale.
    #[default]
    Similarity,
    /// Rotation and translation only.
    Rigid,
}

/// Optimal `(R, s, t)` mapping `pred` onto `gt` in the least-squares sense,
/// reflections excluded.
pub fn procrustes(pred: &[Vector3<f64>], gt: &[Vector3<f64>], alignment: Alignment) -> Result<(Matrix3<f64>, f64, Vector3<f64>)> {
    let n = gt.len() as f64;
    let mp: Vector3<f64> = pred.iter().sum::<Vector3<f64>>() / n;
    let mg: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / n;
    let gt_spread: f64 = gt.iter().map(|g| (g - mg).norm_squared()).sum::<f64>().sqrt();
    if gt_spread < DEGENERATE_SPREAD {
        return Err(Error::DegenerateGeometry(format!(
            "ground-truth joints are coincident (spread {gt_spread:e})"
        )));
    }
    let mut cov = Matrix3::zeros();
    let mut pred_var = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let x = p - mp;
        cov += (g - mg) * x.transpose();
        pred_var += x.norm_squared();
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let s = match alignment {
        Alignment::Rigid => 1.0,
        Alignment::Similarity => {
            if pred_var > 0.0 {
                (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / pred_var
            } else {
                0.0
            }
        }
    };
    let t = mg - r * mp * s;
    Ok((r, s, t))
}

pub fn pa_mpjpe_with(pred: &JointSet, gt: &JointSet, alignment: Alignment) -> Result<f64> {
    check_joints(pred, gt)?;
    let (r, s, t) = procrustes(&pred.positions, &gt.positions, alignment)?;
    let aligned: Vec<Vector3<f64>> = pred.positions.iter().map(|p| r * p * s + t).collect();
    Ok(mean_distance_mm(&aligned, &gt.positions))
}

/// Mean joint distance after optimal similarity alignment, millimeters.
pub fn pa_mpjpe(pred: &JointSet, gt: &JointSet) -> Result<f64> {
    pa_mpjpe_with(pred, gt, Alignment::Similarity)
}

/// Mean geodesic angle over the joints, radians times 100.
pub fn mpjre(pred: &PoseParams, gt: &PoseParams) -> f64 {
    let sum: f64 = pred
        .rotations()
        .iter()
        .zip(gt.rotations())
        .map(|(a, b)| geodesic_distance(a, b))
        .sum();
    sum / NUM_JOINTS as f64 * 100.0
}

/// Fraction of poses whose caption equals the caption they were asked for.
pub fn caption_consistency(poses: &[PoseParams], captions: &[String]) -> Result<f64> {
    if poses.len() != captions.len() {
        return Err(Error::SizeMismatch(format!(
            "{} poses for {} captions",
            poses.len(),
            captions.len()
        )));
    }
    if poses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let hits = poses
        .iter()
        .zip(captions)
        .filter(|(p, c)| caption_pose(p) == **c)
        .count();
    Ok(hits as f64 / poses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{forward_kinematics, KinematicTree};
    use crate::data::{sample_pose, PosePrior};
    use crate::rotmath::{axis_angle_to_matrix, AxisAngle, RotMat};

    fn joints(seed: u64) -> JointSet {
        forward_kinematics(&sample_pose(seed, &PosePrior::default_prior()), &KinematicTree::default_skeleton())
    }

    #[test]
    fn mpjpe_cases() {
        let g = joints(1);
        assert_eq!(mpjpe(&g, &g).unwrap(), 0.0);
        let shifted = g.translated(&Vector3::new(1.0, 2.0, 3.0));
        assert!(mpjpe(&shifted, &g).unwrap() < 1e-9);
        let mut p = g.clone();
        p.positions[5] += Vector3::new(0.003, 0.004, 0.0);
        assert!((mpjpe(&p, &g).unwrap() - 5.0 / 24.0).abs() < 1e-9);
    }

    #[test]
    fn pa_removes_similarity() {
        let g = joints(2);
        let r = axis_angle_to_matrix(&AxisAngle::new(0.3, -1.2, 2.0));
        let p = g.transformed(r.matrix(), 2.0, &Vector3::new(0.5, -3.0, 1.0));
        assert!(pa_mpjpe(&p, &g).unwrap() < 1e-6);
        let rigid = g.transformed(r.matrix(), 1.0, &Vector3::new(0.5, -3.0, 1.0));
        assert!(pa_mpjpe_with(&rigid, &g, Alignment::Rigid).unwrap() < 1e-6);
        assert!(pa_mpjpe_with(&p, &g, Alignment::Rigid).unwrap() > 1.0);
    }

    #[test]
    fn mirror_image_is_not_aligned_away() {
        let g = joints(3);
        let mut mirror = Matrix3::identity();
        mirror[(0, 0)] = -1.0;
        let p = g.transformed(&mirror, 1.0, &Vector3::zeros());
        assert!(pa_mpjpe(&p, &g).unwrap() > 1.0);
    }

    #[test]
    fn coincident_ground_truth_is_degenerate() {
        let g = JointSet {
            positions: vec![Vector3::new(1.0, 1.0, 1.0); NUM_JOINTS],
        };
        assert!(matches!(pa_mpjpe(&joints(1), &g), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn rigid_alignment_never_increases_squared_error() {
        // Root alignment is one feasible rigid transform, so the optimum can
        // only lower the summed squared distance (not necessarily the mean
        // distance).
        let sq = |a: &[Vector3<f64>], b: &[Vector3<f64>]| a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>();
        for s in 0..50 {
            let (p, g) = (joints(100 + s), joints(200 + s));
            let root = g.positions[0] - p.positions[0];
            let rooted: Vec<Vector3<f64>> = p.positions.iter().map(|x| x + root).collect();
            let (r, sc, t) = procrustes(&p.positions, &g.positions, Alignment::Rigid).unwrap();
            let aligned: Vec<Vector3<f64>> = p.positions.iter().map(|x| r * x * sc + t).collect();
            assert!(sq(&aligned, &g.positions) <= sq(&rooted, &g.positions) + 1e-12);
            assert!(pa_mpjpe(&p, &g).unwrap() >= 0.0);
        }
    }

    #[test]
    fn mpjre_cases() {
        let a = sample_pose(4, &PosePrior::default_prior());
        assert_eq!(mpjre(&a, &a), 0.0);
        let id = PoseParams::identity();
        let turned = PoseParams::new(
            (0..NUM_JOINTS)
                .map(|j| if j % 2 == 0 { RotMat::about_x(0.1) } else { RotMat::about_z(-0.1) })
                .collect(),
        )
        .unwrap();
        assert!((mpjre(&turned, &id) - 10.0).abs() < 1e-9);
        let b = sample_pose(5, &PosePrior::default_prior());
        assert!((mpjre(&a, &b) - mpjre(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn consistency_cases() {
        let poses: Vec<PoseParams> = (0..10).map(|s| sample_pose(s, &PosePrior::default_prior())).collect();
        let caps: Vec<String> = poses.iter().map(caption_pose).collect();
        assert_eq!(caption_consistency(&poses, &caps).unwrap(), 1.0);
        let ids = vec![PoseParams::identity(); 10];
        let non_neutral: Vec<String> = caps.iter().filter(|c| *c != crate::data::caption::NEUTRAL_CAPTION).cloned().collect();
        assert_eq!(caption_consistency(&ids[..non_neutral.len()], &non_neutral).unwrap(), 0.0);
        let mut half = poses.clone();
        for p in half.iter_mut().take(5) {
            *p = PoseParams::identity();
        }
        let expected = 5.0 + caps[..5].iter().filter(|c| *c == crate::data::caption::NEUTRAL_CAPTION).count() as f64;
        assert_eq!(caption_consistency(&half, &caps).unwrap(), expected / 10.0);
        assert!(matches!(caption_consistency(&poses[..2], &caps), Err(Error::SizeMismatch(_))));
    }
}
