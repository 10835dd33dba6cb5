//! Rotation representations: axis-angle, rotation matrices and the continuous
//! 6D parameterization used by the pose head.
//!
//! Poses are stored as rotation matrices. 6D and axis-angle are boundary
//! formats only.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 24;

/// Minimum column norm accepted by the Gram-Schmidt step.
pub const DEGENERATE_EPS: f64 = 1e-8;

/// Axis-angle vector: direction is the axis, magnitude the angle in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Maps the vector to the equivalent rotation with angle in `[0, π]`.
    pub fn canonical(&self) -> AxisAngle {
        let angle = self.0.norm();
        if angle <= PI {
            return *self;
        }
        let axis = self.0 / angle;
        let wrapped = angle.rem_euclid(2.0 * PI);
        if wrapped <= PI {
            AxisAngle(axis * wrapped)
        } else {
            AxisAngle(-axis * (2.0 * PI - wrapped))
        }
    }
}

/// A proper rotation matrix (orthonormal, det +1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotMat(Matrix3<f64>);

impl RotMat {
    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and determinant within `tol`.
    pub fn try_new(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if !m.iter().all(|v| v.is_finite()) || ortho > tol || (det - 1.0).abs() > tol {
            return Err(Error::DegenerateInput(format!(
                "not a rotation: |MᵀM - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(RotMat(m))
    }

    /// Wraps a matrix the caller knows to be a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotMat(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> RotMat {
        RotMat(self.0.transpose())
    }

    pub fn compose(&self, other: &RotMat) -> RotMat {
        RotMat(self.0 * other.0)
    }

    pub fn about_x(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Row-major copy of the nine entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

impl std::ops::Mul for RotMat {
    type Output = RotMat;
    fn mul(self, rhs: RotMat) -> RotMat {
        self.compose(&rhs)
    }
}

/// First two columns of a rotation matrix, possibly unnormalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6D {
    pub a1: Vector3<f64>,
    pub a2: Vector3<f64>,
}

impl Rot6D {
    pub fn from_slice(v: &[f64]) -> Rot6D {
        assert!(v.len() >= 6, "6D rotation needs six values");
        Rot6D {
            a1: Vector3::new(v[0], v[1], v[2]),
            a2: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.a1.x, self.a1.y, self.a1.z, self.a2.x, self.a2.y, self.a2.z,
        ]
    }

    pub fn identity() -> Rot6D {
        Rot6D {
            a1: Vector3::x(),
            a2: Vector3::y(),
        }
    }
}

/// The 24 joint rotations of a body pose. Index 0 is the global orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseParams {
    rotations: Vec<RotMat>,
}

impl PoseParams {
    pub fn identity() -> Self {
        PoseParams {
            rotations: vec![RotMat::identity(); NUM_JOINTS],
        }
    }

    pub fn new(rotations: Vec<RotMat>) -> Result<Self> {
        if rotations.len() != NUM_JOINTS {
            return Err(Error::SizeMismatch(format!(
                "pose has {} rotations, expected {NUM_JOINTS}",
                rotations.len()
            )));
        }
        Ok(PoseParams { rotations })
    }

    pub fn rotations(&self) -> &[RotMat] {
        &self.rotations
    }

    pub fn rotation(&self, joint: usize) -> &RotMat {
        &self.rotations[joint]
    }

    pub fn set_rotation(&mut self, joint: usize, r: RotMat) {
        self.rotations[joint] = r;
    }

    pub fn from_axis_angles(aa: &[AxisAngle]) -> Result<Self> {
        PoseParams::new(aa.iter().map(axis_angle_to_matrix).collect())
    }

    pub fn to_axis_angles(&self) -> Vec<AxisAngle> {
        self.rotations.iter().map(matrix_to_axis_angle).collect()
    }

    /// 144 values: per joint, the first then second matrix column.
    pub fn to_6d(&self) -> Vec<f64> {
        self.rotations
            .iter()
            .flat_map(|r| matrix_to_rot6d(r).to_array())
            .collect()
    }

    pub fn from_6d(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_JOINTS * 6 {
            return Err(Error::SizeMismatch(format!(
                "6D pose has {} values, expected {}",
                values.len(),
                NUM_JOINTS * 6
            )));
        }
        let rotations = values
            .chunks_exact(6)
            .map(|c| rot6d_to_matrix(&Rot6D::from_slice(c)))
            .collect::<Result<Vec<_>>>()?;
        PoseParams::new(rotations)
    }

    /// Like [`PoseParams::from_6d`], but columns that are already orthonormal
    /// (within 1e-10) are kept bit-for-bit. Used when reading stored poses so
    /// that write/read cycles are exact.
    pub fn from_6d_stored(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_JOINTS * 6 {
            return Err(Error::SizeMismatch(format!(
                "6D pose has {} values, expected {}",
                values.len(),
                NUM_JOINTS * 6
            )));
        }
        let rotations = values
            .chunks_exact(6)
            .map(|c| {
                let r = Rot6D::from_slice(c);
                let orthonormal = (r.a1.norm() - 1.0).abs() < 1e-10
                    && (r.a2.norm() - 1.0).abs() < 1e-10
                    && r.a1.dot(&r.a2).abs() < 1e-10;
                if orthonormal {
                    Ok(RotMat(Matrix3::from_columns(&[r.a1, r.a2, r.a1.cross(&r.a2)])))
                } else {
                    rot6d_to_matrix(&r)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        PoseParams::new(rotations)
    }

    /// 216 values: nine row-major entries per joint.
    pub fn to_matrix_elements(&self) -> Vec<f64> {
        self.rotations
            .iter()
            .flat_map(|r| r.to_row_major())
            .collect()
    }
}

/// Gram-Schmidt orthonormalization of two columns into a rotation.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotMat> {
    let n1 = r.a1.norm();
    if !(n1 > DEGENERATE_EPS) {
        return Err(Error::DegenerateInput(format!("first column norm {n1:e}")));
    }
    let b1 = r.a1 / n1;
    let u = r.a2 - b1 * b1.dot(&r.a2);
    let nu = u.norm();
    if !(nu > DEGENERATE_EPS) {
        return Err(Error::DegenerateInput(
            "second column parallel to the first".into(),
        ));
    }
    let b2 = u / nu;
    let b3 = b1.cross(&b2);
    Ok(RotMat(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Vector-Jacobian product of [`rot6d_to_matrix`]: maps the gradient w.r.t.
/// the output matrix to the gradient w.r.t. the six raw inputs.
pub fn rot6d_to_matrix_vjp(r: &Rot6D, grad: &Matrix3<f64>) -> Result<[f64; 6]> {
    let n1 = r.a1.norm();
    if !(n1 > DEGENERATE_EPS) {
        return Err(Error::DegenerateInput(format!("first column norm {n1:e}")));
    }
    let b1 = r.a1 / n1;
    let proj = b1.dot(&r.a2);
    let u = r.a2 - b1 * proj;
    let nu = u.norm();
    if !(nu > DEGENERATE_EPS) {
        return Err(Error::DegenerateInput(
            "second column parallel to the first".into(),
        ));
    }
    let b2 = u / nu;

    let g1: Vector3<f64> = grad.column(0).into();
    let g2: Vector3<f64> = grad.column(1).into();
    let g3: Vector3<f64> = grad.column(2).into();

    // b3 = b1 x b2
    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);

    // b2 = u / |u|
    let gu = (gb2 - b2 * b2.dot(&gb2)) / nu;

    // u = a2 - (b1.a2) b1
    let ga2 = gu - b1 * b1.dot(&gu);
    gb1 -= gu * proj + r.a2 * b1.dot(&gu);

    // b1 = a1 / |a1|
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;

    Ok([ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z])
}

pub fn matrix_to_rot6d(m: &RotMat) -> Rot6D {
    Rot6D {
        a1: m.0.column(0).into(),
        a2: m.0.column(1).into(),
    }
}

/// Rodrigues' formula, with a series expansion near zero.
pub fn axis_angle_to_matrix(a: &AxisAngle) -> RotMat {
    let v = a.0;
    let theta2 = v.norm_squared();
    let k = v.cross_matrix();
    let (s, c) = if theta2 < 1e-12 {
        // sin(t)/t and (1-cos t)/t^2 to fourth order
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    RotMat(Matrix3::identity() + k * s + k * k * c)
}

pub fn matrix_to_axis_angle(m: &RotMat) -> AxisAngle {
    let r = &m.0;
    // w = sin(theta) * axis
    let w = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let sin_theta = w.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-6 {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return AxisAngle(w * (1.0 + theta * theta / 6.0));
    }
    if cos_theta > -0.9 {
        return AxisAngle(w * (theta / sin_theta));
    }

    // Near pi: recover the axis from the symmetric part, (R + Rᵀ)/2 - cos I = (1 - cos) a aᵀ.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
    let col = (0..3)
        .max_by(|&i, &j| diag[i].total_cmp(&diag[j]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(col).into();
    axis /= axis.norm();
    if w.dot(&axis) < 0.0 {
        axis = -axis;
    }
    if sin_theta < 1e-12 || theta >= PI {
        // Exactly pi: axis and -axis describe the same rotation.
        if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                axis = -axis;
            }
        }
        return AxisAngle(axis * PI);
    }
    AxisAngle(axis * theta)
}

/// Angle of the relative rotation `r1ᵀ r2`, in radians.
///
/// Computed as `atan2(|skew|, trace - 1)` rather than `acos((trace - 1) / 2)`:
/// the two agree, but the `acos` form loses about eight digits near zero.
pub fn geodesic_distance(r1: &RotMat, r2: &RotMat) -> f64 {
    let rel = r1.0.transpose() * r2.0;
    let w = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let cos2 = (rel.trace() - 1.0).clamp(-2.0, 2.0);
    w.norm().atan2(cos2)
}
