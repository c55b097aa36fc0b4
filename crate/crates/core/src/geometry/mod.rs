//! SE(3)/SO(3) arithmetic, rotation representations and the pinhole camera.
//!
//! Conventions:
//! - angles are radians, lengths meters;
//! - `RigidTransform` `T_ab` maps points expressed in frame `b` into frame `a`,
//!   and `T_ab * T_bc = T_ac`;
//! - Euler angles are intrinsic XYZ: `R = Rx(rx) * Ry(ry) * Rz(rz)`;
//! - quaternions are scalar-first and canonicalized to `w >= 0` on extraction.

mod camera;
mod quaternion;
mod rotation;
mod transform;

pub use camera::{project, unproject, CameraIntrinsics, MIN_DEPTH};
pub use quaternion::{DualQuaternion, Quaternion, UnitQuaternion};
pub use rotation::{decode_rot6d, encode_rot6d, skew, AxisAngle, EulerXYZ, Rot6D, Rotation};
pub use transform::{compose, invert, RigidTransform, HOMOGENEOUS_READ_TOLERANCE};

/// Default tolerance for rotation validity and round-trip checks.
pub const TOLERANCE: f64 = 1e-9;

/// Euler extraction reports gimbal lock when `|ry -+ pi/2|` is below this.
pub const GIMBAL_TOLERANCE: f64 = 1e-7;
