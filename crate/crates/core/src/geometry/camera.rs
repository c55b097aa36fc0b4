use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum depth accepted by [`CameraIntrinsics::project`].
pub const MIN_DEPTH: f64 = 1e-9;

/// Undistorted pinhole intrinsics. All values in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = Error;
    fn try_from(r: RawIntrinsics) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got {fx}, {fy}"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::InvalidInput(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// The 144x256 wrist-camera model used throughout the synthetic
    /// experiments (a D435-class field of view after downsampling).
    pub fn wrist_camera() -> Self {
        Self {
            fx: 200.0,
            fy: 200.0,
            cx: 128.0,
            cy: 72.0,
            width: 256,
            height: 144,
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z > MIN_DEPTH) {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn unproject(&self, px: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth(depth));
        }
        Ok(Vector3::new(
            (px.x - self.cx) / self.fx * depth,
            (px.y - self.cy) / self.fy * depth,
            depth,
        ))
    }

    /// Pixel to `[-1, 1]` image-normalized coordinates (image edges map to +-1).
    pub fn pixel_to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            2.0 * px.x / self.width as f64 - 1.0,
            2.0 * px.y / self.height as f64 - 1.0,
        )
    }

    pub fn normalized_to_pixel(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (uv.x + 1.0) * 0.5 * self.width as f64,
            (uv.y + 1.0) * 0.5 * self.height as f64,
        )
    }

    /// Normalized-coordinate size of one pixel along each axis.
    pub fn pixel_in_normalized(&self) -> Vector2<f64> {
        Vector2::new(2.0 / self.width as f64, 2.0 / self.height as f64)
    }
}

pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    k.project(p)
}

pub fn unproject(k: &CameraIntrinsics, px: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
    k.unproject(px, depth)
}
