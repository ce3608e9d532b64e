//! Suction-pose detection for objects on a moving production belt.
//!
//! Multi-timestep stereo captures are turned into an equivalent static multiview rig by shifting
//! camera extrinsics along the belt, fused into a truncated signed distance volume, and combined
//! with per-view seal and normal maps into ranked 6-DoF suction poses. Poses are scored as
//! `seal × wrench × collision`.
//!
//! Modules, bottom-up:
//! - [`camera`], [`belt`]: pinhole model, belt motion and window assembly.
//! - [`mesh`], [`bvh`], [`scene`], [`render`]: scenes on the belt and ray-cast rasters.
//! - [`annotator`]: analytic seal / wrench / collision model and ground-truth maps.
//! - [`recon`]: TSDF fusion, marching cubes, de-noised depth, ground-truth TSDF.
//! - [`detector`]: volumetric score fields, 2D→3D lifting, ranking.
//! - [`eval`]: reconstruction and ranking metrics, closed-loop declutter episodes.
//! - [`store`], [`manifest`], [`cli`]: file formats and the command line.

pub mod error;
pub mod geom;
pub mod rng;
pub mod raster;

pub mod belt;
pub mod camera;

pub mod bvh;
pub mod mesh;
pub mod render;
pub mod scene;

pub mod annotator;
pub mod cli;
pub mod detector;
pub mod eval;
pub mod recon;
pub mod manifest;
pub mod store;
mod mc_tables;

pub use error::{Error, Result};
