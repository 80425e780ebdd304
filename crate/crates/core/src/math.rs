//! Small fixed-size linear algebra used by the kinematics code.

use core::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_squared())
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Returns `None` for vectors shorter than `eps`.
    pub fn try_normalize(self, eps: f64) -> Option<Vec3> {
        let n = self.norm();
        if n <= eps || !n.is_finite() {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self).scale(t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3x3 matrix, `m[row][col]`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Default for Mat3 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn col(&self, c: usize) -> Vec3 {
        Vec3::new(self.0[0][c], self.0[1][c], self.0[2][c])
    }

    pub fn row(&self, r: usize) -> Vec3 {
        Vec3::from_array(self.0[r])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = self.0[r][0] * o.0[0][c] + self.0[r][1] * o.0[1][c] + self.0[r][2] * o.0[2][c];
            }
        }
        Mat3(out)
    }

    /// Largest absolute entry of `self^T self - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().mul_mat(self);
        let mut err: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                err = err.max((p.0[r][c] - target).abs());
            }
        }
        err
    }

    /// Rotation by `angle` radians about the canonical up (+Y) axis.
    pub fn rot_y(angle: f64) -> Mat3 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_x(angle: f64) -> Mat3 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        self.mul_mat(&o)
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.mul_vec(v)
    }
}

/// Unit quaternion `(w, x, y, z)`, Hamilton convention.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    pub fn try_normalize(&self, eps: f64) -> Option<Quat> {
        let n = self.norm();
        if n <= eps || !n.is_finite() {
            return None;
        }
        Some(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn neg(&self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn mul(&self, o: &Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        self.to_matrix().mul_vec(v)
    }

    pub fn from_axis_angle(v: Vec3) -> Quat {
        let angle = v.norm();
        if angle < 1e-12 {
            // second-order accurate near zero
            let q = Quat::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z);
            return q.try_normalize(0.0).unwrap_or(Quat::IDENTITY);
        }
        let half = 0.5 * angle;
        let s = libm::sin(half) / angle;
        Quat::new(libm::cos(half), v.x * s, v.y * s, v.z * s)
    }

    /// Logarithm map; the result has norm in `[0, pi]`.
    pub fn to_axis_angle(&self) -> Vec3 {
        let q = if self.w < 0.0 { self.neg() } else { *self };
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-12 {
            return v.scale(2.0);
        }
        let angle = 2.0 * libm::atan2(s, q.w);
        v.scale(angle / s)
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Quat { w, x, y, z } = *self;
        Mat3([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }

    /// Shepperd's method; the input must be a rotation matrix.
    pub fn from_matrix(m: &Mat3) -> Quat {
        let m = &m.0;
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = libm::sqrt(trace + 1.0) * 2.0;
            Quat::new(0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = libm::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2.0;
            Quat::new((m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = libm::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2.0;
            Quat::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = libm::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2.0;
            Quat::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s)
        };
        let q = q.try_normalize(0.0).unwrap_or(Quat::IDENTITY);
        if q.w < 0.0 {
            q.neg()
        } else {
            q
        }
    }

    /// Shortest-arc spherical interpolation.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let mut b = *other;
        let mut cos = self.dot(&b);
        if cos < 0.0 {
            b = b.neg();
            cos = -cos;
        }
        if cos > 1.0 - 1e-12 {
            let q = Quat::new(
                self.w + (b.w - self.w) * t,
                self.x + (b.x - self.x) * t,
                self.y + (b.y - self.y) * t,
                self.z + (b.z - self.z) * t,
            );
            return q.try_normalize(0.0).unwrap_or(*self);
        }
        let theta = libm::acos(cos.min(1.0));
        let sin = libm::sin(theta);
        let wa = libm::sin((1.0 - t) * theta) / sin;
        let wb = libm::sin(t * theta) / sin;
        Quat::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
    }

    /// Geodesic angle between two rotations, in `[0, pi]`.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let d = self.conjugate().mul(other);
        d.to_axis_angle().norm()
    }

    /// Rotation angle about +Y of the twist part of a swing-twist split.
    pub fn yaw(&self) -> f64 {
        if self.w.abs() < 1e-15 && self.y.abs() < 1e-15 {
            return 0.0;
        }
        2.0 * libm::atan2(self.y, self.w)
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use core::f64::consts::PI;
    let mut r = libm::fmod(a + PI, 2.0 * PI);
    if r < 0.0 {
        r += 2.0 * PI;
    }
    let out = r - PI;
    if out <= -PI {
        out + 2.0 * PI
    } else {
        out
    }
}

/// Yaw of a rotation matrix about +Y, via the quaternion twist.
pub fn yaw_of(m: &Mat3) -> f64 {
    Quat::from_matrix(m).yaw()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn quaternion_matrix_roundtrip() {
        let q = Quat::from_axis_angle(Vec3::new(0.3, -1.2, 0.7));
        let back = Quat::from_matrix(&q.to_matrix());
        assert!(q.angle_to(&back) < 1e-12);
    }

    #[test]
    fn yaw_extraction() {
        for &a in &[0.0, 0.5, -2.0, 3.0] {
            let m = Mat3::rot_y(a);
            assert!((wrap_angle(yaw_of(&m) - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.25)).abs() - 0.25 < 1e-15);
    }
}
