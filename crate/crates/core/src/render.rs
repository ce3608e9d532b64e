//! Per-pixel ray casting of depth, normal and instance rasters.

use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, RigidPose};
use crate::geom::Vec3;
use crate::raster::{DepthMap, InstanceMask, NormalMap, Raster};
use crate::scene::{Hit, RayTarget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormalFrame {
    #[default]
    World,
    Camera,
}

/// Depth, normals and instance ids from one camera.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub mask: InstanceMask,
}

/// Casts one ray through every pixel centre. Rows are distributed over workers; each pixel is
/// written by exactly one of them, so results do not depend on the thread count.
pub fn render_hits<T: RayTarget + ?Sized>(target: &T, intr: &CameraIntrinsics, pose: &RigidPose) -> Raster<Option<(Hit, f64)>> {
    let (w, h) = intr.dims();
    let mut data = vec![None; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(row, line)| {
        for (col, px) in line.iter_mut().enumerate() {
            let ray_cam = intr.pixel_ray(col as f64, row as f64).normalize();
            let dir = pose.rotation() * ray_cam;
            *px = target.raycast(&pose.center, &dir).map(|hit| (hit, hit.t * ray_cam.z));
        }
    });
    Raster::from_vec(w, h, data)
}

pub fn render_all<T: RayTarget + ?Sized>(target: &T, intr: &CameraIntrinsics, pose: &RigidPose, frame: NormalFrame) -> RenderOutput {
    let hits = render_hits(target, intr, pose);
    let (w, h) = intr.dims();
    let depth = hits.data.iter().map(|o| o.map_or(0.0, |(_, z)| z)).collect();
    let normals = hits
        .data
        .iter()
        .map(|o| match o {
            Some((hit, _)) => match frame {
                NormalFrame::World => hit.normal,
                NormalFrame::Camera => pose.rotation().tr_mul(&hit.normal),
            },
            None => Vec3::zeros(),
        })
        .collect();
    let mask = hits.data.iter().map(|o| o.map_or(0, |(hit, _)| hit.instance_id)).collect();
    RenderOutput {
        depth: Raster::from_vec(w, h, depth),
        normals: Raster::from_vec(w, h, normals),
        mask: Raster::from_vec(w, h, mask),
    }
}

/// Camera-frame z of the first hit per pixel; misses are 0.
pub fn render_depth<T: RayTarget + ?Sized>(target: &T, intr: &CameraIntrinsics, pose: &RigidPose) -> DepthMap {
    render_all(target, intr, pose, NormalFrame::World).depth
}

pub fn render_normals<T: RayTarget + ?Sized>(target: &T, intr: &CameraIntrinsics, pose: &RigidPose, frame: NormalFrame) -> NormalMap {
    render_all(target, intr, pose, frame).normals
}

pub fn render_instance_mask<T: RayTarget + ?Sized>(target: &T, intr: &CameraIntrinsics, pose: &RigidPose) -> InstanceMask {
    render_all(target, intr, pose, NormalFrame::World).mask
}
