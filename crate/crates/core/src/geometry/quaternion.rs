use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{RigidTransform, Rotation};

/// A (not necessarily unit) quaternion stored scalar-first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_scalar_vector(w: f64, v: Vector3<f64>) -> Self {
        Self::new(w, v.x, v.y, v.z)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Hamilton product.
impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Unit quaternion representing a rotation. Extraction from a rotation matrix
/// canonicalizes the sign so that `w >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Quaternion", try_from = "Quaternion")]
pub struct UnitQuaternion(Quaternion);

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self(Quaternion::identity())
    }

    /// Normalizes `q`. Returns `None` for a zero quaternion.
    pub fn new_normalize(q: Quaternion) -> Option<Self> {
        let n = q.norm();
        if n > 0.0 && n.is_finite() {
            Some(Self(q.scale(1.0 / n)))
        } else {
            None
        }
    }

    pub fn into_inner(self) -> Quaternion {
        self.0
    }

    pub fn quaternion(&self) -> &Quaternion {
        &self.0
    }

    pub fn w(&self) -> f64 {
        self.0.w
    }
    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }

    /// Sign-flipped copy with `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.0.w < 0.0 {
            Self(-self.0)
        } else {
            self
        }
    }

    /// Shepperd's method; always picks the numerically largest pivot.
    pub fn from_rotation(r: &Rotation) -> Self {
        let m = r.matrix();
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
            let s = 2.0 * (1.0 + trace).sqrt();
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        Self::new_normalize(q)
            .expect("rotation matrix yields a non-zero quaternion")
            .canonical()
    }

    pub fn to_rotation(&self) -> Rotation {
        let Quaternion { w, x, y, z } = self.0;
        let m = nalgebra::Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        Rotation::from_matrix_unchecked(m)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let c = self.canonical().0;
        2.0 * c.vector().norm().atan2(c.w)
    }
}

impl From<UnitQuaternion> for Quaternion {
    fn from(q: UnitQuaternion) -> Quaternion {
        q.0
    }
}

impl TryFrom<Quaternion> for UnitQuaternion {
    type Error = String;
    fn try_from(q: Quaternion) -> Result<Self, String> {
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(format!("quaternion norm {} is not 1", q.norm()));
        }
        UnitQuaternion::new_normalize(q).ok_or_else(|| "zero quaternion".to_string())
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, o: UnitQuaternion) -> UnitQuaternion {
        UnitQuaternion(self.0 * o.0)
    }
}

/// Dual quaternion `real + eps * dual` encoding a rigid motion, with
/// `dual = 0.5 * (0, t) * real`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualQuaternion {
    pub real: Quaternion,
    pub dual: Quaternion,
}

impl DualQuaternion {
    pub fn from_transform(t: &RigidTransform) -> Self {
        let real = UnitQuaternion::from_rotation(&t.rotation).into_inner();
        let dual = (Quaternion::from_scalar_vector(0.0, t.translation) * real).scale(0.5);
        Self { real, dual }
    }

    /// Inverse of [`DualQuaternion::from_transform`]. The real part is
    /// normalized first, so small drift off the unit sphere is tolerated.
    pub fn to_transform(&self) -> Option<RigidTransform> {
        let n = self.real.norm();
        if !(n > 0.0) {
            return None;
        }
        let real = self.real.scale(1.0 / n);
        let dual = self.dual.scale(1.0 / n);
        let t = (dual * real.conjugate()).scale(2.0).vector();
        let rotation = UnitQuaternion::new_normalize(real)?.to_rotation();
        Some(RigidTransform::new(rotation, t))
    }

    /// Sign-flipped copy whose real part has `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.real.w < 0.0 {
            Self {
                real: -self.real,
                dual: -self.dual,
            }
        } else {
            self
        }
    }

    /// Unit real part and `real . dual = 0`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        (self.real.norm() - 1.0).abs() <= tol && self.real.dot(&self.dual).abs() <= tol
    }
}

impl Mul for DualQuaternion {
    type Output = DualQuaternion;
    fn mul(self, o: DualQuaternion) -> DualQuaternion {
        DualQuaternion {
            real: self.real * o.real,
            dual: self.real * o.dual + self.dual * o.real,
        }
    }
}
