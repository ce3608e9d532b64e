//! Reconstruction and ranking metrics, and closed-loop declutter episodes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::annotator::{evaluate, SuctionCandidate, SuctionCupSpec, SuctionLabel};
use crate::belt::{assemble_window, BeltConfig, CaptureView, CaptureWindow, StereoCapture};
use crate::camera::{CameraIntrinsics, RigidPose};
use crate::detector::{detect, score_volume, DetectorConfig, GroundTruthMaps, ScoreVolume, SuctionPoseResult};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::raster::SealMap;
use crate::recon::{gt_tsdf, make_noisy_provider, GridSpec, NoiseSpec, TsdfVolume};
use crate::scene::{scene_at_time, Scene, SceneGeometry};

/// Thresholds averaged by [`ap_topk`].
pub const AP_THRESHOLDS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tsdf_mae: f64,
    pub surface_tsdf_mae: f64,
    pub seal_mae: Option<f64>,
    pub collision_accuracy: f64,
    /// `(k, AP@Top-k)`
    pub ap_topk: Vec<(usize, f64)>,
    pub observed_voxels: usize,
    pub surface_voxels: usize,
    pub poses: usize,
}

fn check_specs(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::SpecMismatch);
    }
    Ok(())
}

/// True where a voxel's GT sign differs from one of its face neighbours.
pub fn surface_band(gt: &TsdfVolume) -> Vec<bool> {
    let spec = &gt.spec;
    (0..spec.len())
        .map(|i| {
            let s = gt.values[i] < 0.0;
            spec.neighbours(i).any(|n| (gt.values[n] < 0.0) != s)
        })
        .collect()
}

fn masked_mae(pred: &TsdfVolume, gt: &TsdfVolume, keep: impl Fn(usize) -> bool) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..gt.spec.len() {
        if pred.weights[i] > 0.0 && gt.weights[i] > 0.0 && keep(i) {
            sum += (pred.values[i] as f64 - gt.values[i] as f64).abs();
            n += 1;
        }
    }
    let mae = if n == 0 { 0.0 } else { sum / n as f64 * gt.spec.truncation };
    (mae, n)
}

/// Mean absolute TSDF difference over voxels observed in both, in mm.
pub fn tsdf_mae(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<f64> {
    check_specs(&pred.spec, &gt.spec)?;
    Ok(masked_mae(pred, gt, |_| true).0)
}

/// [`tsdf_mae`] restricted to voxels next to a GT sign change.
pub fn surface_tsdf_mae(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<f64> {
    check_specs(&pred.spec, &gt.spec)?;
    let band = surface_band(gt);
    Ok(masked_mae(pred, gt, |i| band[i]).0)
}

/// Mean absolute seal difference over pixels valid in both maps.
pub fn seal_mae(pred: &SealMap, gt: &SealMap) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::RasterMismatch(pred.dims(), gt.dims()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..gt.scores.len() {
        if pred.valid.data[i] && gt.valid.data[i] {
            sum += (pred.scores.data[i] - gt.scores.data[i]).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Fraction of GT surface voxels where predicted and GT collision labels agree.
pub fn collision_accuracy(pred: &ScoreVolume, gt: &ScoreVolume) -> Result<f64> {
    check_specs(&pred.spec, &gt.spec)?;
    let (mut agree, mut n) = (0usize, 0usize);
    for i in 0..gt.spec.len() {
        if gt.surface[i] {
            n += 1;
            if pred.collision[i] == gt.collision[i] {
                agree += 1;
            }
        }
    }
    Ok(if n == 0 { 1.0 } else { agree as f64 / n as f64 })
}

/// Score volume computed from the ground-truth TSDF.
pub fn gt_score_volume(geom: &SceneGeometry, spec: &GridSpec, cup: &SuctionCupSpec, config: &DetectorConfig) -> Result<ScoreVolume> {
    let gt = gt_tsdf(geom, spec)?;
    Ok(score_volume(&gt, cup, config).2)
}

/// Ground-truth label of a predicted pose: the point is snapped to the nearest object surface
/// within `epsilon`; farther poses get `None`.
pub fn snap_and_evaluate(
    geom: &SceneGeometry,
    point: &Vec3,
    direction: &Vec3,
    cup: &SuctionCupSpec,
    epsilon: f64,
) -> Option<(u32, SuctionLabel)> {
    let (id, q, _, _) = geom.nearest_surface(point, epsilon)?;
    let cand = SuctionCandidate { point: q, direction: direction.normalize(), instance_id: id };
    Some((id, evaluate(geom, &cand, cup)))
}

/// Mean over [`AP_THRESHOLDS`] of `#{s* > s} / k`, on the first `k` scores.
pub fn ap_from_scores(scores: &[f64], k: usize) -> f64 {
    if k == 0 || scores.is_empty() {
        return 0.0;
    }
    let top = &scores[..scores.len().min(k)];
    let hits: usize = AP_THRESHOLDS.iter().map(|&s| top.iter().filter(|&&x| x > s).count()).sum();
    hits as f64 / (k * AP_THRESHOLDS.len()) as f64
}

/// AP@Top-k of ranked poses against ground truth.
pub fn ap_topk(poses: &[SuctionPoseResult], geom: &SceneGeometry, cup: &SuctionCupSpec, k: usize, epsilon: f64) -> f64 {
    let scores: Vec<f64> = poses
        .iter()
        .take(k)
        .map(|p| snap_and_evaluate(geom, &p.point, &p.direction, cup, epsilon).map_or(0.0, |(_, l)| l.overall))
        .collect();
    ap_from_scores(&scores, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessRule {
    pub min_seal: f64,
    pub require_collision_free: bool,
    /// Wrench must be strictly above this.
    pub min_wrench: f64,
}

impl Default for SuccessRule {
    fn default() -> Self {
        Self { min_seal: 0.2, require_collision_free: true, min_wrench: 0.0 }
    }
}

impl SuccessRule {
    pub fn accepts(&self, l: &SuctionLabel) -> bool {
        l.seal >= self.min_seal && (!self.require_collision_free || l.collision == 1.0) && l.wrench > self.min_wrench
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeclutterConfig {
    pub timesteps: usize,
    pub max_steps: usize,
    /// How far upstream of the reconstruction zone the scene starts, mm.
    pub start_offset: f64,
    pub success: SuccessRule,
}

impl Default for DeclutterConfig {
    fn default() -> Self {
        Self { timesteps: 5, max_steps: 40, start_offset: 500.0, success: SuccessRule::default() }
    }
}

/// One timestep's detection as seen by the episode loop.
pub trait StepDetector {
    fn detect(&self, geom: &SceneGeometry, window: &CaptureWindow, attempted: &[u32]) -> Result<Vec<SuctionPoseResult>>;
}

/// The full pipeline with rendered depth (optionally noisy) and ground-truth 2D maps.
#[derive(Clone, Debug)]
pub struct PipelineDetector {
    pub grid: GridSpec,
    pub cup: SuctionCupSpec,
    pub config: DetectorConfig,
    pub noise: NoiseSpec,
    pub seal_stride: usize,
}

impl PipelineDetector {
    pub fn new(grid: GridSpec, cup: SuctionCupSpec, config: DetectorConfig, noise: NoiseSpec) -> Self {
        Self { grid, cup, config, noise, seal_stride: 4 }
    }
}

impl StepDetector for PipelineDetector {
    fn detect(&self, geom: &SceneGeometry, window: &CaptureWindow, attempted: &[u32]) -> Result<Vec<SuctionPoseResult>> {
        let depth = make_noisy_provider(geom, self.noise.clone())?;
        let maps = GroundTruthMaps { geometry: geom, cup: self.cup.clone(), seal_stride: self.seal_stride };
        Ok(detect(window, &depth, &maps, &self.grid, &self.cup, &self.config, attempted)?.poses)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub pose: SuctionPoseResult,
    /// Instance the pose snapped to, if any.
    pub target: Option<u32>,
    pub label: Option<SuctionLabel>,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    pub detections: Vec<SuctionPoseResult>,
    pub attempt: Option<AttemptLog>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepLog>,
    pub attempts: usize,
    pub successes: usize,
    pub removed: Vec<u32>,
    pub total_objects: usize,
    /// True when the loop hit `max_steps` instead of running out of objects.
    pub timed_out: bool,
}

impl EpisodeLog {
    /// Successes per attempt; 0 without attempts.
    pub fn success_rate(&self) -> f64 {
        if self.attempts == 0 { 0.0 } else { self.successes as f64 / self.attempts as f64 }
    }

    /// Removed objects per object in the scene.
    pub fn declutter_rate(&self) -> f64 {
        if self.total_objects == 0 { 0.0 } else { self.removed.len() as f64 / self.total_objects as f64 }
    }
}

/// Window of `n` stereo captures ending at `time`, poses already belt-shifted.
pub fn capture_window(rig: &[(CameraIntrinsics, RigidPose)], belt: &BeltConfig, n: usize, time: f64) -> Result<CaptureWindow> {
    if rig.len() != 2 {
        return Err(Error::InvalidConfig(format!("stereo rig needs 2 cameras, got {}", rig.len())));
    }
    let history: Vec<StereoCapture> = (0..n)
        .map(|i| {
            let t = time - (n - 1 - i) as f64 * belt.timestep;
            StereoCapture { timestamp: t, views: [0, 1].map(|c| CaptureView::new(c, rig[c].0.clone(), rig[c].1.clone(), t)) }
        })
        .collect();
    assemble_window(&history, n, belt)
}

/// Runs the belt past the cameras, attempting the top non-repetitive pose each timestep.
///
/// The scene starts `start_offset` upstream of the reconstruction zone. Each step advances the
/// belt one timestep; a success removes the targeted object. The loop ends when a step detects
/// nothing and every remaining object has left the zone, or after `max_steps`.
pub fn simulate_declutter(
    scene: &Scene,
    belt: &BeltConfig,
    rig: &[(CameraIntrinsics, RigidPose)],
    cup: &SuctionCupSpec,
    snap_epsilon: f64,
    detector: &dyn StepDetector,
    config: &DeclutterConfig,
) -> Result<EpisodeLog> {
    belt.validate()?;
    if scene.instances.is_empty() {
        return Err(Error::InvalidConfig("declutter needs a non-empty scene".into()));
    }
    let n = config.timesteps.max(1);
    let zone_end = belt.reconstruction_interval().1;
    let mut remaining = scene.translated(&(-belt.direction * config.start_offset));
    let mut log = EpisodeLog { total_objects: scene.instances.len(), ..EpisodeLog::default() };
    let mut attempted: Vec<u32> = Vec::new();
    for step in 0..config.max_steps {
        let clock = Instant::now();
        let time = step as f64 * belt.timestep;
        let current = scene_at_time(&remaining, belt, time);
        let geom = current.geometry()?;
        let window = capture_window(rig, belt, n, time)?;
        let detections = detector.detect(&geom, &window, &attempted)?;
        let attempt = detections.first().map(|pose| {
            let snapped = snap_and_evaluate(&geom, &pose.point, &pose.direction, cup, snap_epsilon);
            let target = snapped.map(|(id, _)| id);
            let label = snapped.map(|(_, l)| l);
            let success = label.is_some_and(|l| config.success.accepts(&l));
            AttemptLog { pose: *pose, target, label, success }
        });
        if let Some(a) = &attempt {
            log.attempts += 1;
            for id in [a.pose.instance_id, a.target.unwrap_or(0)] {
                if id != 0 && !attempted.contains(&id) {
                    attempted.push(id);
                }
            }
            if a.success {
                let id = a.target.expect("success implies a target");
                log.successes += 1;
                log.removed.push(id);
                remaining = remaining.without(id);
            }
        }
        let detected = attempt.is_some();
        log.steps.push(StepLog { step, time, detections, attempt, elapsed_ms: clock.elapsed().as_secs_f64() * 1e3 });
        let pending = scene_at_time(&remaining, belt, time)
            .geometry()?
            .instances
            .iter()
            .any(|inst| lower_extent(&inst.bounds, &belt.direction) < zone_end);
        if remaining.instances.is_empty() || (!detected && !pending) {
            return Ok(log);
        }
    }
    log.timed_out = true;
    Ok(log)
}

fn lower_extent(b: &Aabb, dir: &Vec3) -> f64 {
    (0..8)
        .map(|i| {
            let c = Vec3::new(
                if i & 1 == 0 { b.min.x } else { b.max.x },
                if i & 2 == 0 { b.min.y } else { b.max.y },
                if i & 4 == 0 { b.min.z } else { b.max.z },
            );
            c.dot(dir)
        })
        .fold(f64::INFINITY, f64::min)
}
