//! Rotation representations and conversions.
//!
//! Every form converts through a rotation matrix. The 6D form stores the first
//! two matrix columns back to back, `[c0.x, c0.y, c0.z, c1.x, c1.y, c1.z]`, and
//! is decoded with Gram-Schmidt so that any non-degenerate 6-vector maps to a
//! proper rotation.

use crate::error::{bail, Result};
use crate::math::{Mat3, Quat, Vec3};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Intrinsic Euler order: `Zxy` means `R = Rz(a0) * Rx(a1) * Ry(a2)`, which is
/// the order BVH channels are listed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum EulerOrder {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

impl EulerOrder {
    pub const ALL: [EulerOrder; 6] = [
        EulerOrder::Xyz,
        EulerOrder::Xzy,
        EulerOrder::Yxz,
        EulerOrder::Yzx,
        EulerOrder::Zxy,
        EulerOrder::Zyx,
    ];

    /// Axis indices (0 = X, 1 = Y, 2 = Z) in application order.
    pub fn axes(self) -> [usize; 3] {
        match self {
            EulerOrder::Xyz => [0, 1, 2],
            EulerOrder::Xzy => [0, 2, 1],
            EulerOrder::Yxz => [1, 0, 2],
            EulerOrder::Yzx => [1, 2, 0],
            EulerOrder::Zxy => [2, 0, 1],
            EulerOrder::Zyx => [2, 1, 0],
        }
    }

    pub fn from_axes(axes: [usize; 3]) -> Option<EulerOrder> {
        EulerOrder::ALL.into_iter().find(|o| o.axes() == axes)
    }

    fn parity(self) -> f64 {
        match self {
            EulerOrder::Xyz | EulerOrder::Yzx | EulerOrder::Zxy => 1.0,
            _ => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Rotation {
    Quaternion(Quat),
    /// Rotation vector, radians.
    AxisAngle(Vec3),
    Matrix(Mat3),
    SixD([f64; 6]),
    /// Angles in radians, listed in `order`.
    Euler { angles: [f64; 3], order: EulerOrder },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotationForm {
    Quaternion,
    AxisAngle,
    Matrix,
    SixD,
    Euler(EulerOrder),
}

fn axis_rotation(axis: usize, angle: f64) -> Mat3 {
    match axis {
        0 => Mat3::rot_x(angle),
        1 => Mat3::rot_y(angle),
        _ => Mat3::rot_z(angle),
    }
}

pub fn euler_to_matrix(angles: [f64; 3], order: EulerOrder) -> Mat3 {
    let [a, b, c] = order.axes();
    axis_rotation(a, angles[0]) * axis_rotation(b, angles[1]) * axis_rotation(c, angles[2])
}

pub fn matrix_to_euler(m: &Mat3, order: EulerOrder) -> [f64; 3] {
    let [i, j, k] = order.axes();
    let s = order.parity();
    let r = &m.0;
    let sb = (s * r[i][k]).clamp(-1.0, 1.0);
    let b = libm::asin(sb);
    if sb.abs() < 1.0 - 1e-12 {
        let a = libm::atan2(-s * r[j][k], r[k][k]);
        let c = libm::atan2(-s * r[i][j], r[i][i]);
        [a, b, c]
    } else {
        // Gimbal lock: only a +/- c is determined; put it all in a.
        let a = libm::atan2(s * r[k][j], r[j][j]);
        [a, b, 0.0]
    }
}

pub fn matrix_to_sixd(m: &Mat3) -> [f64; 6] {
    let c0 = m.col(0);
    let c1 = m.col(1);
    [c0.x, c0.y, c0.z, c1.x, c1.y, c1.z]
}

const SIXD_EPS: f64 = 1e-9;

/// Gram-Schmidt decode; rejects near-zero or parallel column pairs.
pub fn sixd_to_matrix(v: &[f64; 6]) -> Result<Mat3> {
    let a0 = Vec3::new(v[0], v[1], v[2]);
    let a1 = Vec3::new(v[3], v[4], v[5]);
    let Some(b0) = a0.try_normalize(SIXD_EPS) else {
        bail!(InvalidRotation, "6D first column has near-zero norm");
    };
    let a1_norm = a1.norm();
    let orth = a1 - b0.scale(b0.dot(a1));
    let Some(b1) = orth.try_normalize(SIXD_EPS * a1_norm.max(1.0)) else {
        bail!(InvalidRotation, "6D columns are parallel or second column is zero");
    };
    let b2 = b0.cross(b1);
    Ok(Mat3::from_cols(b0, b1, b2))
}

/// As [`sixd_to_matrix`], falling back to identity on degenerate input.
pub fn sixd_to_matrix_or_identity(v: &[f64; 6]) -> Mat3 {
    sixd_to_matrix(v).unwrap_or(Mat3::IDENTITY)
}

impl Rotation {
    pub fn form(&self) -> RotationForm {
        match self {
            Rotation::Quaternion(_) => RotationForm::Quaternion,
            Rotation::AxisAngle(_) => RotationForm::AxisAngle,
            Rotation::Matrix(_) => RotationForm::Matrix,
            Rotation::SixD(_) => RotationForm::SixD,
            Rotation::Euler { order, .. } => RotationForm::Euler(*order),
        }
    }

    pub fn to_matrix(&self) -> Result<Mat3> {
        match self {
            Rotation::Quaternion(q) => match q.try_normalize(1e-12) {
                Some(q) => Ok(q.to_matrix()),
                None => bail!(InvalidRotation, "zero-norm quaternion"),
            },
            Rotation::AxisAngle(v) => {
                if !v.is_finite() {
                    bail!(InvalidRotation, "non-finite axis-angle");
                }
                Ok(Quat::from_axis_angle(*v).to_matrix())
            }
            Rotation::Matrix(m) => {
                if !m.is_finite() || m.orthonormality_error() > 1e-6 || m.determinant() < 0.0 {
                    bail!(InvalidRotation, "matrix is not a proper rotation");
                }
                Ok(*m)
            }
            Rotation::SixD(v) => sixd_to_matrix(v),
            Rotation::Euler { angles, order } => Ok(euler_to_matrix(*angles, *order)),
        }
    }

    pub fn to_quat(&self) -> Result<Quat> {
        match self {
            Rotation::Quaternion(q) => match q.try_normalize(1e-12) {
                Some(q) => Ok(q),
                None => bail!(InvalidRotation, "zero-norm quaternion"),
            },
            Rotation::AxisAngle(v) => Ok(Quat::from_axis_angle(*v)),
            other => Ok(Quat::from_matrix(&other.to_matrix()?)),
        }
    }

    pub fn from_matrix(m: &Mat3, form: RotationForm) -> Rotation {
        match form {
            RotationForm::Quaternion => Rotation::Quaternion(Quat::from_matrix(m)),
            RotationForm::AxisAngle => Rotation::AxisAngle(Quat::from_matrix(m).to_axis_angle()),
            RotationForm::Matrix => Rotation::Matrix(*m),
            RotationForm::SixD => Rotation::SixD(matrix_to_sixd(m)),
            RotationForm::Euler(order) => Rotation::Euler { angles: matrix_to_euler(m, order), order },
        }
    }
}

/// Converts `r` into `target`. Quaternion and axis-angle pairs skip the matrix
/// detour to keep precision near pi.
pub fn convert_rotation(r: &Rotation, target: RotationForm) -> Result<Rotation> {
    match (r, target) {
        (Rotation::Quaternion(_), RotationForm::AxisAngle) => Ok(Rotation::AxisAngle(r.to_quat()?.to_axis_angle())),
        (Rotation::AxisAngle(v), RotationForm::Quaternion) => Ok(Rotation::Quaternion(Quat::from_axis_angle(*v))),
        (Rotation::Quaternion(_), RotationForm::Quaternion) => Ok(Rotation::Quaternion(r.to_quat()?)),
        _ => Ok(Rotation::from_matrix(&r.to_matrix()?, target)),
    }
}

/// Geodesic distance between two rotations in any form.
pub fn angular_distance(a: &Rotation, b: &Rotation) -> Result<f64> {
    Ok(a.to_quat()?.angle_to(&b.to_quat()?))
}

/// Minimal rotation taking direction `from` onto direction `to`.
pub fn rotation_between(from: Vec3, to: Vec3) -> Option<Mat3> {
    let f = from.try_normalize(1e-12)?;
    let t = to.try_normalize(1e-12)?;
    let axis = f.cross(t);
    let s = axis.norm();
    let c = f.dot(t);
    if s < 1e-12 {
        if c > 0.0 {
            return Some(Mat3::IDENTITY);
        }
        // antiparallel: any perpendicular axis
        let helper = if f.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        let perp = f.cross(helper).try_normalize(1e-12)?;
        return Some(Quat::from_axis_angle(perp.scale(core::f64::consts::PI)).to_matrix());
    }
    let angle = libm::atan2(s, c);
    Some(Quat::from_axis_angle(axis.scale(angle / s)).to_matrix())
}
