//! Vector and quaternion algebra used for every pose computation.
//!
//! Quaternions are stored and serialized in `(w, x, y, z)` order. Every
//! constructor normalizes, so a [`Quat`] in hand is always a unit quaternion.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm below which a quaternion cannot be normalized.
pub const MIN_QUAT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("quaternion norm {0:e} is too small to normalize")]
    ZeroQuaternion(f64),
    #[error("cannot average an empty list")]
    EmptyList,
    #[error("non-finite component")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
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
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-15).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
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

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes `(w, x, y, z)` into a unit quaternion.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, MathError> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(MathError::NonFinite);
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n <= MIN_QUAT_NORM {
            return Err(MathError::ZeroQuaternion(n));
        }
        Ok(Quat { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self, MathError> {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    /// Rotation of `angle` radians about `axis`. A zero axis yields the identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        match axis.normalized() {
            Some(a) => {
                let (s, c) = (0.5 * angle).sin_cos();
                Quat::renormalized(c, a.x * s, a.y * s, a.z * s)
            }
            None => Quat::IDENTITY,
        }
    }

    /// Inverse of [`Quat::to_rotation_vector`].
    pub fn from_rotation_vector(rv: Vec3) -> Quat {
        let angle = rv.norm();
        if angle < 1e-300 {
            return Quat::IDENTITY;
        }
        Quat::from_axis_angle(rv, angle)
    }

    // Internal constructor for products of unit quaternions; the norm is
    // within rounding of one so it cannot collapse.
    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Quat {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Quat { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector_part(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Same rotation, opposite sign.
    pub fn negated(self) -> Quat {
        Quat { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn conjugate(self) -> Quat {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(self) -> Quat {
        self.conjugate()
    }

    /// Hamilton product `self ⊗ o`, renormalized.
    pub fn multiply(self, o: Quat) -> Quat {
        let (a, b) = (self, o);
        Quat::renormalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// `q v q⁻¹`.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u × v) + 2 u × (u × v), with u the vector part.
        let u = self.vector_part();
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// Geodesic angle between two rotations, in `[0, π]`.
    pub fn angle_to(self, o: Quat) -> f64 {
        2.0 * self.dot(o).abs().clamp(-1.0, 1.0).acos()
    }

    /// Axis-angle vector of the rotation, taking the short way round.
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = if self.w < 0.0 { self.negated() } else { self };
        let v = q.vector_part();
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0;
        }
        v * (2.0 * s.atan2(q.w) / s)
    }

    /// Sign-aligned normalized mean. Valid for clustered rotations.
    pub fn average(qs: &[Quat]) -> Result<Quat, MathError> {
        let first = *qs.first().ok_or(MathError::EmptyList)?;
        let mut acc = [0.0; 4];
        for q in qs {
            let q = if q.dot(first) < 0.0 { q.negated() } else { *q };
            for (a, c) in acc.iter_mut().zip(q.to_array()) {
                *a += c;
            }
        }
        let n = qs.len() as f64;
        Quat::new(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n)
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, o: Quat) -> Quat {
        self.multiply(o)
    }
}

impl TryFrom<[f64; 4]> for Quat {
    type Error = MathError;
    fn try_from(a: [f64; 4]) -> Result<Self, MathError> {
        Quat::from_array(a)
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        q.to_array()
    }
}

/// Position in meters plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self { position, orientation }
    }

    /// Composes `self ∘ other` (apply `other` in `self`'s frame).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation.rotate(other.position),
            orientation: self.orientation * other.orientation,
        }
    }

    /// Maps a point from this pose's local frame to the parent frame.
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.position + self.orientation.rotate(p)
    }
}
