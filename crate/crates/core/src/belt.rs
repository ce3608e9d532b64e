//! Belt motion model.
//!
//! Objects ride the belt at a constant velocity. A capture taken `k` timesteps before the
//! reference (newest) timestep is equivalent to a capture of the reference-time scene from a
//! camera shifted downstream by `speed * timestep * k`, which turns a stream of stereo pairs into
//! a static multiview rig.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, RigidPose};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::raster::{DepthMap, InstanceMask, NormalMap, SealMap};

pub const DEFAULT_SPEED: f64 = 100.0;
pub const DEFAULT_TIMESTEP: f64 = 1.0;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BeltRepr", into = "BeltRepr")]
pub struct BeltConfig {
    /// mm/s
    pub speed: f64,
    pub direction: Vec3,
    /// s
    pub timestep: f64,
    pub reconstruction_zone: Aabb,
    /// Interval along `direction`, mm.
    pub suction_zone: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct BeltRepr {
    speed: f64,
    direction: [f64; 3],
    timestep: f64,
    reconstruction_zone: Aabb,
    suction_zone: [f64; 2],
}

impl TryFrom<BeltRepr> for BeltConfig {
    type Error = Error;
    fn try_from(r: BeltRepr) -> Result<Self> {
        let b = BeltConfig {
            speed: r.speed,
            direction: Vec3::from(r.direction),
            timestep: r.timestep,
            reconstruction_zone: r.reconstruction_zone,
            suction_zone: r.suction_zone,
        };
        b.validate()?;
        Ok(b)
    }
}

impl From<BeltConfig> for BeltRepr {
    fn from(b: BeltConfig) -> Self {
        BeltRepr {
            speed: b.speed,
            direction: [b.direction.x, b.direction.y, b.direction.z],
            timestep: b.timestep,
            reconstruction_zone: b.reconstruction_zone,
            suction_zone: b.suction_zone,
        }
    }
}

impl Default for BeltConfig {
    fn default() -> Self {
        Self {
            speed: DEFAULT_SPEED,
            direction: Vec3::x(),
            timestep: DEFAULT_TIMESTEP,
            reconstruction_zone: Aabb::new(Vec3::new(-250.0, -200.0, 0.0), Vec3::new(250.0, 200.0, 300.0)),
            suction_zone: [600.0, 900.0],
        }
    }
}

impl BeltConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(Error::InvalidBelt(format!("speed {} must be >= 0", self.speed)));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidBelt("direction must be a unit vector".into()));
        }
        if !(self.timestep > 0.0) {
            return Err(Error::InvalidBelt(format!("timestep {} must be > 0", self.timestep)));
        }
        let [s0, s1] = self.suction_zone;
        if !(s0 < s1) {
            return Err(Error::InvalidBelt("suction zone interval is empty".into()));
        }
        let (r0, r1) = self.reconstruction_interval();
        if !(r1 <= s0 || s1 <= r0) {
            return Err(Error::InvalidBelt("reconstruction and suction zones overlap along the belt".into()));
        }
        Ok(())
    }

    /// Extent of the reconstruction zone projected on the belt direction.
    pub fn reconstruction_interval(&self) -> (f64, f64) {
        let z = &self.reconstruction_zone;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..8 {
            let c = Vec3::new(
                if i & 1 == 0 { z.min.x } else { z.max.x },
                if i & 2 == 0 { z.min.y } else { z.max.y },
                if i & 4 == 0 { z.min.z } else { z.max.z },
            );
            let s = c.dot(&self.direction);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    /// Belt displacement over `dt` seconds.
    pub fn displacement(&self, dt: f64) -> Vec3 {
        self.direction * (self.speed * dt)
    }

    /// Displacement accumulated over `lag` whole timesteps.
    pub fn lag_displacement(&self, lag: u32) -> Vec3 {
        self.direction * (self.speed * self.timestep * lag as f64)
    }
}

/// Equivalent static camera for a capture taken `lag` timesteps before the reference time.
pub fn transform_extrinsics(pose: &RigidPose, belt: &BeltConfig, lag: u32) -> RigidPose {
    pose.translated(&belt.lag_displacement(lag))
}

/// One camera image with its calibration, optionally carrying rendered or sensed rasters.
#[derive(Clone, Debug)]
pub struct CaptureView {
    pub camera: usize,
    pub intrinsics: CameraIntrinsics,
    /// Original extrinsics at capture time, or the belt-compensated pose once inside a window.
    pub pose: RigidPose,
    pub timestamp: f64,
    /// Timesteps before the window's reference time (0 outside a window).
    pub lag: u32,
    pub depth: Option<DepthMap>,
    pub seal: Option<SealMap>,
    pub normals: Option<NormalMap>,
    pub mask: Option<InstanceMask>,
}

impl CaptureView {
    pub fn new(camera: usize, intrinsics: CameraIntrinsics, pose: RigidPose, timestamp: f64) -> Self {
        Self { camera, intrinsics, pose, timestamp, lag: 0, depth: None, seal: None, normals: None, mask: None }
    }
}

/// Both cameras at one timestep.
#[derive(Clone, Debug)]
pub struct StereoCapture {
    pub timestamp: f64,
    pub views: [CaptureView; 2],
}

#[derive(Clone, Debug)]
pub struct CaptureWindow {
    /// `2 * window_size` views, oldest timestep first, camera order within a timestep.
    pub views: Vec<CaptureView>,
    pub window_size: usize,
    pub reference_time: f64,
}

impl CaptureWindow {
    pub fn lags(&self) -> Vec<u32> {
        self.views.iter().map(|v| v.lag).collect()
    }

    pub fn newest_views(&self) -> impl Iterator<Item = (usize, &CaptureView)> {
        self.views.iter().enumerate().filter(|(_, v)| v.lag == 0)
    }
}

/// Builds a window from the newest `n` entries of `history`, replacing poses with their
/// belt-compensated equivalents.
pub fn assemble_window(history: &[StereoCapture], n: usize, belt: &BeltConfig) -> Result<CaptureWindow> {
    if n == 0 || history.len() < n {
        return Err(Error::InsufficientHistory { have: history.len(), need: n.max(1) });
    }
    let recent = &history[history.len() - n..];
    let reference_time = recent[n - 1].timestamp;
    let mut views = Vec::with_capacity(2 * n);
    for (i, cap) in recent.iter().enumerate() {
        let expected_lag = (n - 1 - i) as f64;
        let lag_f = (reference_time - cap.timestamp) / belt.timestep;
        if (lag_f - expected_lag).abs() > 1e-9 {
            return Err(Error::NonUniformTimestamps(format!(
                "capture at t={} is {lag_f} timesteps before t={reference_time}, expected {expected_lag}",
                cap.timestamp
            )));
        }
        let lag = expected_lag as u32;
        for view in &cap.views {
            if view.timestamp != cap.timestamp {
                return Err(Error::NonUniformTimestamps(format!(
                    "camera {} stamped {} inside capture at {}",
                    view.camera, view.timestamp, cap.timestamp
                )));
            }
            let mut v = view.clone();
            v.pose = transform_extrinsics(&view.pose, belt, lag);
            v.lag = lag;
            views.push(v);
        }
    }
    Ok(CaptureWindow { views, window_size: n, reference_time })
}

/// Where a point detected at `t_detect` will be at `t_exec`.
pub fn execution_shift(p_detected: &Vec3, t_detect: f64, t_exec: f64, belt: &BeltConfig) -> Result<Vec3> {
    let dt = t_exec - t_detect;
    if dt < 0.0 {
        return Err(Error::NegativeDelay(-dt));
    }
    Ok(p_detected + belt.displacement(dt))
}

/// Earliest time the point's belt coordinate lies inside the suction zone.
pub fn workspace_entry_time(p_detected: &Vec3, t_detect: f64, belt: &BeltConfig) -> Result<f64> {
    let s = p_detected.dot(&belt.direction);
    let [z0, z1] = belt.suction_zone;
    if s > z1 {
        return Err(Error::AlreadyPassed { position: s });
    }
    if s >= z0 {
        return Ok(t_detect);
    }
    if belt.speed == 0.0 {
        return Err(Error::BeltStopped);
    }
    Ok(t_detect + (z0 - s) / belt.speed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap()
    }

    fn capture(t: f64) -> StereoCapture {
        let a = RigidPose::look_at(Vec3::new(-100.0, -300.0, 500.0), Vec3::zeros(), Vec3::z()).unwrap();
        let b = RigidPose::look_at(Vec3::new(100.0, 300.0, 500.0), Vec3::zeros(), Vec3::z()).unwrap();
        StereoCapture { timestamp: t, views: [CaptureView::new(0, intr(), a, t), CaptureView::new(1, intr(), b, t)] }
    }

    #[test]
    fn shift_by_one_timestep() {
        let pose = RigidPose::from_translation(Vec3::new(0.0, 0.0, 500.0));
        let shifted = transform_extrinsics(&pose, &BeltConfig::default(), 1);
        assert_eq!(shifted.center, Vec3::new(100.0, 0.0, 500.0));
        assert_eq!(shifted.rotation(), pose.rotation());
        assert_eq!(transform_extrinsics(&pose, &BeltConfig::default(), 0), pose);
        let four = transform_extrinsics(&pose, &BeltConfig::default(), 4);
        assert_eq!(four.center, Vec3::new(400.0, 0.0, 500.0));
    }

    #[test]
    fn window_lags_and_shifts() {
        let belt = BeltConfig::default();
        let history: Vec<_> = (0..7).map(|t| capture(t as f64)).collect();
        let w = assemble_window(&history, 5, &belt).unwrap();
        assert_eq!(w.views.len(), 10);
        assert_eq!(w.lags(), vec![4, 4, 3, 3, 2, 2, 1, 1, 0, 0]);
        assert_eq!(w.reference_time, 6.0);
        let orig = history[2].views[0].pose;
        assert_eq!(w.views[0].pose.center, orig.center + Vec3::new(400.0, 0.0, 0.0));
        for v in &w.views {
            v.pose.check().unwrap();
        }
    }

    #[test]
    fn window_of_one_has_no_shift() {
        let belt = BeltConfig::default();
        let history = vec![capture(0.0), capture(1.0)];
        let w = assemble_window(&history, 1, &belt).unwrap();
        assert_eq!(w.views.len(), 2);
        assert_eq!(w.views[0].pose, history[1].views[0].pose);
    }

    #[test]
    fn window_needs_history() {
        let history: Vec<_> = (0..3).map(|t| capture(t as f64)).collect();
        let err = assemble_window(&history, 5, &BeltConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { have: 3, need: 5 }));
    }

    #[test]
    fn window_rejects_gaps() {
        let history = vec![capture(0.0), capture(1.0), capture(3.0)];
        assert!(matches!(
            assemble_window(&history, 3, &BeltConfig::default()),
            Err(Error::NonUniformTimestamps(_))
        ));
    }

    #[test]
    fn execution_shift_examples() {
        let belt = BeltConfig::default();
        let p = Vec3::new(0.0, 0.0, 50.0);
        assert_eq!(execution_shift(&p, 1.0, 3.0, &belt).unwrap(), Vec3::new(200.0, 0.0, 50.0));
        assert_eq!(execution_shift(&p, 1.0, 1.0, &belt).unwrap(), p);
        assert!(matches!(execution_shift(&p, 2.0, 1.0, &belt), Err(Error::NegativeDelay(_))));
    }

    #[test]
    fn entry_time_into_suction_zone() {
        let belt = BeltConfig::default();
        // 100 + 100 t = 600
        let t = workspace_entry_time(&Vec3::new(100.0, 0.0, 0.0), 2.0, &belt).unwrap();
        assert!((t - 7.0).abs() < 1e-12);
        let at = execution_shift(&Vec3::new(100.0, 0.0, 0.0), 2.0, t, &belt).unwrap();
        assert!((at.x - 600.0).abs() < 1e-9);
        assert_eq!(workspace_entry_time(&Vec3::new(700.0, 0.0, 0.0), 2.0, &belt).unwrap(), 2.0);
        assert!(matches!(
            workspace_entry_time(&Vec3::new(1000.0, 0.0, 0.0), 0.0, &belt),
            Err(Error::AlreadyPassed { .. })
        ));
    }

    #[test]
    fn belt_validation() {
        let mut b = BeltConfig::default();
        b.direction = Vec3::new(1.0, 1.0, 0.0);
        assert!(b.validate().is_err());
        let mut b = BeltConfig::default();
        b.suction_zone = [0.0, 100.0];
        assert!(b.validate().is_err());
        let mut b = BeltConfig::default();
        b.timestep = 0.0;
        assert!(b.validate().is_err());
        let json = serde_json::to_string(&BeltConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<BeltConfig>(&json).unwrap(), BeltConfig::default());
    }

    proptest! {
        #[test]
        fn lag_shifts_are_additive(k1 in 0u32..50, k2 in 0u32..50, yaw in 0.0f64..6.28) {
            let belt = BeltConfig { speed: 100.0, timestep: 1.0, ..BeltConfig::default() };
            let rot = crate::geom::yaw_rotation(yaw);
            let pose = RigidPose::new(rot, Vec3::new(1.0, 2.0, 3.0)).unwrap();
            let a = transform_extrinsics(&transform_extrinsics(&pose, &belt, k1), &belt, k2);
            let b = transform_extrinsics(&pose, &belt, k1 + k2);
            prop_assert_eq!(a.center, b.center);
            prop_assert_eq!(a.rotation(), b.rotation());
            prop_assert!(crate::camera::check_rotation(a.rotation()).is_ok());
        }
    }
}
