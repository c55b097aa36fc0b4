use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DualQuaternion, Rotation, TOLERANCE};
use crate::error::{Error, Result};

/// Entries further than this from a rotation are rejected when reading a
/// transform from a 4x4 matrix; entries within it but outside [`TOLERANCE`]
/// are re-orthonormalized.
pub const HOMOGENEOUS_READ_TOLERANCE: f64 = 1e-4;

/// A rigid transform `[R | t]` in SE(3). Applied to a point as `R * p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Rotation,
    /// Meters.
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.matrix() * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt.matrix() * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads a homogeneous matrix. The bottom row must be `[0 0 0 1]`; the
    /// rotation block is kept verbatim when valid at [`TOLERANCE`] and
    /// re-orthonormalized when within [`HOMOGENEOUS_READ_TOLERANCE`].
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite transform entry".into()));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| (a - b).abs() > TOLERANCE)
        {
            return Err(Error::InvalidInput(format!(
                "bottom row of homogeneous transform must be [0, 0, 0, 1], got {bottom:?}"
            )));
        }
        let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let rotation = match Rotation::from_matrix(block) {
            Ok(r) => r,
            Err(_) => {
                Rotation::from_matrix_with_tolerance(block, HOMOGENEOUS_READ_TOLERANCE)?;
                Rotation::project(&block)?
            }
        };
        Ok(Self::new(rotation, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_homogeneous();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self> {
        Self::from_homogeneous(&Matrix4::from_fn(|r, c| rows[r][c]))
    }

    pub fn to_dual_quaternion(&self) -> DualQuaternion {
        DualQuaternion::from_transform(self)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

// Serialized as a row-major 4x4 homogeneous matrix.
impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(d)?;
        RigidTransform::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
