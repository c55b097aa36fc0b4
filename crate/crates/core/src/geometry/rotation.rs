use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{UnitQuaternion, GIMBAL_TOLERANCE, TOLERANCE};
use crate::error::{Error, Result};

/// Skew-symmetric cross-product matrix: `skew(v) * u == v.cross(&u)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A rotation in SO(3) backed by a 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and `det = +1` at [`TOLERANCE`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        Self::from_matrix_with_tolerance(m, TOLERANCE)
    }

    pub fn from_matrix_with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let r = Self(m);
        if r.is_valid(tol) {
            Ok(r)
        } else {
            Err(Error::InvalidInput(format!(
                "matrix is not a rotation (orthonormality error {:.3e}, det {:.12})",
                r.orthonormality_error(),
                m.determinant()
            )))
        }
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Closest rotation in the Frobenius sense (SVD with reflection fix-up).
    pub fn project(m: &Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite matrix entries".into()));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::NumericalFailure("SVD failed".into())),
        };
        let d = (u * v_t).determinant().signum();
        let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
        Ok(Self(u * fix * v_t))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity())
            .abs()
            .max()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|v| v.is_finite())
            && self.orthonormality_error() <= tol
            && (self.0.determinant() - 1.0).abs() <= tol
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rodrigues' formula. `axis` is normalized internally; a zero axis
    /// yields the identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let k = skew(&(axis / n));
        let (s, c) = angle.sin_cos();
        Self(Matrix3::identity() + k * s + k * k * (1.0 - c))
    }

    /// Exponential map from a rotation vector.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        Self::from_axis_angle(omega, omega.norm())
    }

    /// Logarithm map: rotation vector `angle * axis` with angle in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        let q = UnitQuaternion::from_rotation(self);
        let v = q.quaternion().vector();
        let s = v.norm();
        if s == 0.0 {
            return Vector3::zeros();
        }
        let angle = 2.0 * s.atan2(q.w());
        v * (angle / s)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        UnitQuaternion::from_rotation(self).angle()
    }

    /// Angle of `self * other^T`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (*self * other.transpose()).angle()
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation(self)
    }

    pub fn from_quaternion(q: &UnitQuaternion) -> Self {
        q.to_rotation()
    }

    pub fn to_axis_angle(&self) -> AxisAngle {
        AxisAngle::from_rotation(self)
    }

    pub fn to_euler_xyz(&self) -> EulerXYZ {
        self.euler_xyz_checked().0
    }

    /// Intrinsic XYZ Euler angles, `R = Rx(rx) * Ry(ry) * Rz(rz)`. The flag
    /// is set when `ry` lies within [`GIMBAL_TOLERANCE`] of `+-pi/2`; in that
    /// case `rx = 0` and the coupled freedom is folded into `rz`.
    pub fn euler_xyz_checked(&self) -> (EulerXYZ, bool) {
        let m = &self.0;
        let cy = m[(1, 2)].hypot(m[(2, 2)]);
        let ry = m[(0, 2)].atan2(cy);
        if (ry.abs() - FRAC_PI_2).abs() < GIMBAL_TOLERANCE {
            let rz = m[(1, 0)].atan2(m[(1, 1)]);
            (EulerXYZ::new(0.0, ry, rz), true)
        } else {
            let rx = (-m[(1, 2)]).atan2(m[(2, 2)]);
            let rz = (-m[(0, 1)]).atan2(m[(0, 0)]);
            (EulerXYZ::new(rx, ry, rz), false)
        }
    }

    pub fn from_euler_xyz(e: &EulerXYZ) -> Self {
        Self::about_x(e.rx) * Self::about_y(e.ry) * Self::about_z(e.rz)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Axis-angle pair with unit axis and angle in `[0, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: Vector3<f64>,
    pub angle: f64,
}

impl AxisAngle {
    /// Normalizes the axis and folds the angle into `[0, pi]`.
    pub fn new(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !angle.is_finite() {
            return Err(Error::InvalidInput(
                "axis must be non-zero and angle finite".into(),
            ));
        }
        let r = Rotation::from_axis_angle(&(axis / n), angle);
        Ok(Self::from_rotation(&r))
    }

    /// For the identity rotation the axis is `(1, 0, 0)`.
    pub fn from_rotation(r: &Rotation) -> Self {
        let q = UnitQuaternion::from_rotation(r);
        let v = q.quaternion().vector();
        let s = v.norm();
        if s == 0.0 {
            return Self {
                axis: Vector3::x(),
                angle: 0.0,
            };
        }
        Self {
            axis: v / s,
            angle: (2.0 * s.atan2(q.w())).min(PI),
        }
    }

    pub fn to_rotation(&self) -> Rotation {
        Rotation::from_axis_angle(&self.axis, self.angle)
    }

    pub fn scaled_axis(&self) -> Vector3<f64> {
        self.axis * self.angle
    }
}

/// Intrinsic XYZ Euler angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerXYZ {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl EulerXYZ {
    pub const fn new(rx: f64, ry: f64, rz: f64) -> Self {
        Self { rx, ry, rz }
    }

    pub fn to_rotation(&self) -> Rotation {
        Rotation::from_euler_xyz(self)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }
}

/// First two columns of a rotation matrix, `(c0, c1)` flattened.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn encode(r: &Rotation) -> Self {
        let m = r.matrix();
        Self([
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ])
    }

    /// Gram-Schmidt on the two embedded vectors, completed by a cross product.
    pub fn decode(&self) -> Result<Rotation> {
        let a = Vector3::new(self.0[0], self.0[1], self.0[2]);
        let b = Vector3::new(self.0[3], self.0[4], self.0[5]);
        let (na, nb) = (a.norm(), b.norm());
        if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
            return Err(Error::DegenerateEncoding);
        }
        let e1 = a / na;
        if e1.cross(&(b / nb)).norm() < TOLERANCE {
            return Err(Error::DegenerateEncoding);
        }
        let e2 = (b - e1 * e1.dot(&b)).normalize();
        let e3 = e1.cross(&e2);
        Ok(Rotation(Matrix3::from_columns(&[e1, e2, e3])))
    }
}

pub fn encode_rot6d(r: &Rotation) -> Rot6D {
    Rot6D::encode(r)
}

pub fn decode_rot6d(v: &Rot6D) -> Result<Rotation> {
    v.decode()
}
