//! Pinhole camera model.
//!
//! Camera frame follows the usual vision convention: +x right, +y down, +z forward. Pixel
//! coordinates are continuous with pixel `(col, row)` centred at `(col, row)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = Error;
    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraIntrinsics> for IntrinsicsRepr {
    fn from(c: CameraIntrinsics) -> Self {
        IntrinsicsRepr { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive ({fx}, {fy})")));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Centered principal point and a horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    /// Unnormalised camera-frame direction through a pixel (z component 1).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Camera-to-world rigid transform: `p_world = rotation * p_cam + center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct RigidPose {
    rotation: Mat3,
    pub center: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// Row-major.
    rotation: [[f64; 3]; 3],
    center: [f64; 3],
}

impl TryFrom<PoseRepr> for RigidPose {
    type Error = Error;
    fn try_from(r: PoseRepr) -> Result<Self> {
        let m = Mat3::from_fn(|i, j| r.rotation[i][j]);
        RigidPose::new(m, Vec3::from(r.center))
    }
}

impl From<RigidPose> for PoseRepr {
    fn from(p: RigidPose) -> Self {
        let r = p.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            center: [p.center.x, p.center.y, p.center.z],
        }
    }
}

pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Checks `RᵀR = I` and `det R = +1` within [`ROTATION_TOLERANCE`].
pub fn check_rotation(r: &Mat3) -> Result<()> {
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if err > ROTATION_TOLERANCE {
        return Err(Error::InvalidPose(format!("rotation not orthonormal (error {err:e})")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::InvalidPose(format!("rotation determinant {det}")));
    }
    Ok(())
}

impl RigidPose {
    pub fn new(rotation: Mat3, center: Vec3) -> Result<Self> {
        check_rotation(&rotation)?;
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidPose("non-finite center".into()));
        }
        Ok(Self { rotation, center })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), center: Vec3::zeros() }
    }

    pub fn from_translation(center: Vec3) -> Self {
        Self { rotation: Mat3::identity(), center }
    }

    /// Camera at `eye` looking at `target`; `up` resolves roll (image −y points towards it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidPose("eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidPose("up vector parallel to viewing direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::new(Mat3::from_columns(&[x, y, z]), eye)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p_world - self.center))
    }

    pub fn to_world(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation * p_cam + self.center
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self { rotation: self.rotation, center: self.center + offset }
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            center: self.rotation * other.center + self.center,
        }
    }

    pub fn check(&self) -> Result<()> {
        check_rotation(&self.rotation)
    }
}

/// Projects a world point; returns `(pixel, depth)` with depth the camera-frame z.
pub fn project(intr: &CameraIntrinsics, pose: &RigidPose, p_world: &Vec3) -> Result<([f64; 2], f64)> {
    let pc = pose.to_camera(p_world);
    if pc.z <= 0.0 {
        return Err(Error::BehindCamera(pc.z));
    }
    let u = intr.fx * pc.x / pc.z + intr.cx;
    let v = intr.fy * pc.y / pc.z + intr.cy;
    Ok(([u, v], pc.z))
}

pub fn backproject(intr: &CameraIntrinsics, pose: &RigidPose, pixel: [f64; 2], depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let pc = intr.pixel_ray(pixel[0], pixel[1]) * depth;
    Ok(pose.to_world(&pc))
}
