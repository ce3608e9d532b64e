//! From a fused volume and per-view 2D maps to ranked suction poses.
//!
//! The volume side labels occupied voxels into connected components (one per object) and
//! evaluates wrench and collision on every surface voxel. The image side grid-samples seal maps,
//! lifts the proposals through depth re-rendered from the extracted surface, and picks up the
//! volumetric scores of the nearest surface voxel.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotator::{cup_cylinder, render_normal_map, render_seal_map, wrench_from_lever, SuctionCupSpec};
use crate::belt::{CaptureView, CaptureWindow};
use crate::camera::backproject;
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::raster::{depth_valid, DepthMap, InstanceMask, NormalMap, SealMap};
use crate::recon::{fuse, marching_cubes, render_depth_from_mesh, DepthProvider, GridSpec, SurfaceMesh, TsdfVolume};
use crate::render::render_instance_mask;
use crate::scene::SceneGeometry;

/// How voxels never seen by any camera are treated when building occupancy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnobservedPolicy {
    Empty,
    /// Unseen space counts as solid; object interiors are never observed by a surface camera.
    #[default]
    Occupied,
}

/// Which views contribute seal-map proposals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalViews {
    #[default]
    All,
    /// Only the views captured at the newest timestep.
    Newest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub k: usize,
    /// Seal-map sampling cell size, px.
    pub stride: usize,
    pub seal_threshold: f64,
    /// Largest distance between a pose and the surface when re-scoring it against ground truth, mm.
    pub snap_epsilon: f64,
    pub unobserved: UnobservedPolicy,
    /// g/cm³, used for component mass.
    pub density: f64,
    pub proposal_views: ProposalViews,
    /// Candidates closer than this to the grid's side faces are dropped, mm.
    pub edge_margin: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            k: 5,
            stride: 8,
            seal_threshold: 0.2,
            snap_epsilon: 15.0,
            unobserved: UnobservedPolicy::Occupied,
            density: 0.3,
            proposal_views: ProposalViews::All,
            edge_margin: 20.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.seal_threshold) {
            return Err(Error::InvalidConfig(format!("seal threshold {}", self.seal_threshold)));
        }
        if !(self.edge_margin >= 0.0) {
            return Err(Error::InvalidConfig(format!("edge margin {}", self.edge_margin)));
        }
        if !(self.snap_epsilon >= 0.0) || !(self.density > 0.0) {
            return Err(Error::InvalidConfig("snap epsilon and density must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Occupancy {
    pub spec: GridSpec,
    pub occupied: Vec<bool>,
}

impl Occupancy {
    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// Occupied with at least one empty face neighbour inside the grid.
    pub fn is_surface(&self, idx: usize) -> bool {
        self.occupied[idx] && self.spec.neighbours(idx).any(|n| !self.occupied[n])
    }
}

pub fn occupancy_from_tsdf(vol: &TsdfVolume, iso: f64, policy: UnobservedPolicy) -> Occupancy {
    let occupied = vol
        .values
        .iter()
        .zip(&vol.weights)
        .map(|(&v, &w)| if w > 0.0 { (v as f64) < iso } else { policy == UnobservedPolicy::Occupied })
        .collect();
    Occupancy { spec: vol.spec.clone(), occupied }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentLabeling {
    pub spec: GridSpec,
    /// 0 = empty, components numbered from 1 in scan order of their first voxel.
    pub labels: Vec<u32>,
    pub counts: Vec<usize>,
    pub centroids: Vec<Vec3>,
    /// mm³
    pub volumes: Vec<f64>,
}

impl ComponentLabeling {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// 6-connected flood labelling.
pub fn connected_components(occ: &Occupancy) -> ComponentLabeling {
    let spec = &occ.spec;
    let mut labels = vec![0u32; spec.len()];
    let mut counts = Vec::new();
    let mut centroids = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..spec.len() {
        if !occ.occupied[start] || labels[start] != 0 {
            continue;
        }
        let id = counts.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut n = 0usize;
        let mut sum = Vec3::zeros();
        while let Some(v) = queue.pop_front() {
            n += 1;
            sum += spec.center_of(v);
            for m in spec.neighbours(v) {
                if occ.occupied[m] && labels[m] == 0 {
                    labels[m] = id;
                    queue.push_back(m);
                }
            }
        }
        counts.push(n);
        centroids.push(sum / n as f64);
    }
    let voxel = spec.voxel_size.powi(3);
    let volumes = counts.iter().map(|&c| c as f64 * voxel).collect();
    ComponentLabeling { spec: spec.clone(), labels, counts, centroids, volumes }
}

/// Per-voxel scores; only surface voxels carry values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVolume {
    pub spec: GridSpec,
    pub wrench: Vec<f64>,
    pub collision: Vec<f64>,
    pub surface: Vec<bool>,
}

/// Wrench score on every surface voxel, with the voxel centre as contact point and the
/// component's centroid and volume (times `density`, g/cm³) as the load.
pub fn wrench_volume(labels: &ComponentLabeling, occ: &Occupancy, cup: &SuctionCupSpec, density: f64) -> Vec<f64> {
    let spec = &labels.spec;
    (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            if !occ.is_surface(idx) {
                return 0.0;
            }
            let c = labels.labels[idx] as usize - 1;
            // g/cm³ → kg/mm³
            let mass = labels.volumes[c] * density * 1e-6;
            wrench_from_lever(&(labels.centroids[c] - spec.center_of(idx)), mass, cup)
        })
        .collect()
}

/// Outward unit TSDF gradient by central differences (one-sided at the grid border).
pub fn tsdf_gradient(vol: &TsdfVolume, idx: usize) -> Vec3 {
    let spec = &vol.spec;
    let c = spec.coords(idx);
    let mut g = Vec3::zeros();
    for a in 0..3 {
        let mut lo = c;
        let mut hi = c;
        if c[a] > 0 {
            lo[a] -= 1;
        }
        if c[a] + 1 < spec.dims[a] {
            hi[a] += 1;
        }
        let span = (hi[a] - lo[a]) as f64;
        if span > 0.0 {
            let v = |p: [usize; 3]| vol.values[spec.index(p[0], p[1], p[2])] as f64;
            g[a] = (v(hi) - v(lo)) / span;
        }
    }
    g
}

/// Cup collision on every surface voxel: the cup cylinder stands on the voxel centre along the
/// TSDF gradient and collides with the belt half-space or with any occupied voxel of another
/// component whose centre lies within half a voxel of it. Degenerate gradients score 0.
pub fn collision_volume(vol: &TsdfVolume, occ: &Occupancy, labels: &ComponentLabeling, cup: &SuctionCupSpec) -> Vec<f64> {
    let spec = &vol.spec;
    let pad = spec.voxel_size / 2.0;
    (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            if !occ.is_surface(idx) {
                return 0.0;
            }
            let g = tsdf_gradient(vol, idx);
            let norm = g.norm();
            if norm < 1e-6 {
                return 0.0;
            }
            let cyl = cup_cylinder(&spec.center_of(idx), &(g / norm), cup);
            if cyl.min_z() < 0.0 {
                return 0.0;
            }
            let own = labels.labels[idx];
            let top = cyl.base + cyl.axis * cyl.height;
            let r = cyl.radius + pad;
            let range = |a: usize| -> Option<(usize, usize)> {
                let lo = cyl.base[a].min(top[a]) - r;
                let hi = cyl.base[a].max(top[a]) + r;
                let f = |x: f64| ((x - spec.origin[a]) / spec.voxel_size - 0.5).floor();
                let (l, h) = (f(lo) + 1.0, f(hi));
                let max = spec.dims[a] as f64 - 1.0;
                if h < 0.0 || l > max {
                    return None;
                }
                Some((l.max(0.0) as usize, h.min(max) as usize))
            };
            let (Some((i0, i1)), Some((j0, j1)), Some((k0, k1))) = (range(0), range(1), range(2)) else {
                return 1.0;
            };
            for k in k0..=k1 {
                for j in j0..=j1 {
                    for i in i0..=i1 {
                        let m = spec.index(i, j, k);
                        let l = labels.labels[m];
                        if l != 0 && l != own && cyl.contains_padded(&spec.center(i, j, k), pad) {
                            return 0.0;
                        }
                    }
                }
            }
            1.0
        })
        .collect()
}

pub fn score_volume(vol: &TsdfVolume, cup: &SuctionCupSpec, config: &DetectorConfig) -> (Occupancy, ComponentLabeling, ScoreVolume) {
    let occ = occupancy_from_tsdf(vol, 0.0, config.unobserved);
    let labels = connected_components(&occ);
    let wrench = wrench_volume(&labels, &occ, cup, config.density);
    let collision = collision_volume(vol, &occ, &labels, cup);
    let surface = (0..occ.spec.len()).map(|i| occ.is_surface(i)).collect();
    let scores = ScoreVolume { spec: vol.spec.clone(), wrench, collision, surface };
    (occ, labels, scores)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub pixel: [usize; 2],
    pub seal: f64,
}

/// Best valid pixel of every `stride × stride` cell, kept if it reaches the threshold. Ties go to
/// the first pixel in row-major order.
pub fn grid_sample_seal(map: &SealMap, stride: usize, threshold: f64) -> Vec<Proposal> {
    let (w, h) = map.dims();
    let mut out = Vec::new();
    for r0 in (0..h).step_by(stride.max(1)) {
        for c0 in (0..w).step_by(stride.max(1)) {
            let mut best: Option<Proposal> = None;
            for row in r0..(r0 + stride).min(h) {
                for col in c0..(c0 + stride).min(w) {
                    if !*map.valid.get(col, row) {
                        continue;
                    }
                    let s = *map.scores.get(col, row);
                    if best.is_none_or(|b| s > b.seal) {
                        best = Some(Proposal { pixel: [col, row], seal: s });
                    }
                }
            }
            if let Some(b) = best.filter(|b| b.seal >= threshold) {
                out.push(b);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuctionPoseResult {
    pub point: Vec3,
    pub direction: Vec3,
    pub seal: f64,
    pub wrench: f64,
    pub collision: f64,
    pub overall: f64,
    pub pixel: [usize; 2],
    /// Index of the source view within the window.
    pub view: usize,
    /// From the instance mask; 0 when unknown.
    pub instance_id: u32,
}

/// Back-projects proposals through the de-noised depth; directions come from the normal map.
/// Proposals over holes or without a normal are dropped. Scores other than seal are left at 0.
pub fn lift(
    proposals: &[Proposal],
    depth: &DepthMap,
    normals: &NormalMap,
    view_index: usize,
    view: &CaptureView,
) -> Vec<SuctionPoseResult> {
    proposals
        .iter()
        .filter_map(|p| {
            let [col, row] = p.pixel;
            let d = *depth.get(col, row);
            if !depth_valid(d) {
                return None;
            }
            let n = normals.get(col, row);
            let len = n.norm();
            if !(len > 1e-9) {
                return None;
            }
            let point = backproject(&view.intrinsics, &view.pose, [col as f64, row as f64], d).ok()?;
            Some(SuctionPoseResult {
                point,
                direction: n / len,
                seal: p.seal,
                wrench: 0.0,
                collision: 0.0,
                overall: 0.0,
                pixel: p.pixel,
                view: view_index,
                instance_id: 0,
            })
        })
        .collect()
}

/// How far (in voxels, per axis) `assign_scores` looks for a surface voxel.
pub const ASSIGN_REACH: usize = 2;

/// Copies wrench and collision from the nearest surface voxel within [`ASSIGN_REACH`] voxels
/// (ties to the lowest index) and sets the overall score. Candidates outside the grid or with no
/// surface voxel nearby are dropped.
pub fn assign_scores(candidates: Vec<SuctionPoseResult>, scores: &ScoreVolume) -> Vec<SuctionPoseResult> {
    let spec = &scores.spec;
    candidates
        .into_iter()
        .filter_map(|mut c| {
            let [ci, cj, ck] = spec.voxel_of(&c.point)?;
            let lo = |v: usize| v.saturating_sub(ASSIGN_REACH);
            let hi = |v: usize, a: usize| (v + ASSIGN_REACH).min(spec.dims[a] - 1);
            let mut best: Option<(f64, usize)> = None;
            for k in lo(ck)..=hi(ck, 2) {
                for j in lo(cj)..=hi(cj, 1) {
                    for i in lo(ci)..=hi(ci, 0) {
                        let idx = spec.index(i, j, k);
                        if !scores.surface[idx] {
                            continue;
                        }
                        let d = (spec.center(i, j, k) - c.point).norm_squared();
                        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && idx < bi)) {
                            best = Some((d, idx));
                        }
                    }
                }
            }
            let (_, idx) = best?;
            c.wrench = scores.wrench[idx];
            c.collision = scores.collision[idx];
            c.overall = c.seal * c.wrench * c.collision;
            Some(c)
        })
        .collect()
}

/// Sorts by overall score, descending; ties keep (pixel index, view) order. Keeps at most `k`.
pub fn topk(mut candidates: Vec<SuctionPoseResult>, k: usize, width: usize) -> Vec<SuctionPoseResult> {
    rank(&mut candidates, width);
    candidates.truncate(k);
    candidates
}

fn rank(candidates: &mut [SuctionPoseResult], width: usize) {
    candidates.sort_by(|a, b| {
        b.overall
            .total_cmp(&a.overall)
            .then((a.pixel[1] * width + a.pixel[0]).cmp(&(b.pixel[1] * width + b.pixel[0])))
            .then(a.view.cmp(&b.view))
    });
}

/// Keeps the first pose per instance id and drops ids already attempted; id 0 always passes.
pub fn repetitive_avoidance(ranked: Vec<SuctionPoseResult>, attempted: &[u32]) -> Vec<SuctionPoseResult> {
    let mut seen: Vec<u32> = attempted.to_vec();
    ranked
        .into_iter()
        .filter(|p| {
            if p.instance_id == 0 {
                return true;
            }
            if seen.contains(&p.instance_id) {
                return false;
            }
            seen.push(p.instance_id);
            true
        })
        .collect()
}

/// Seal, normal and instance maps for a view in the reconstruction frame.
pub trait MapProvider: Sync {
    fn seal(&self, view: &CaptureView) -> Result<SealMap>;
    /// World-frame unit normals; zero where unknown.
    fn normals(&self, view: &CaptureView) -> Result<NormalMap>;
    fn mask(&self, view: &CaptureView) -> Result<InstanceMask>;
}

/// Maps stored on the capture views.
#[derive(Clone, Copy, Debug, Default)]
pub struct RecordedMaps;

impl MapProvider for RecordedMaps {
    fn seal(&self, view: &CaptureView) -> Result<SealMap> {
        view.seal.clone().ok_or(Error::MissingRaster("seal"))
    }
    fn normals(&self, view: &CaptureView) -> Result<NormalMap> {
        view.normals.clone().ok_or(Error::MissingRaster("normal"))
    }
    fn mask(&self, view: &CaptureView) -> Result<InstanceMask> {
        view.mask.clone().ok_or(Error::MissingRaster("mask"))
    }
}

/// Ground-truth maps rendered from the reference-time scene.
#[derive(Clone, Debug)]
pub struct GroundTruthMaps<'a> {
    pub geometry: &'a SceneGeometry,
    pub cup: SuctionCupSpec,
    /// Exact-evaluation stride of the seal map, px.
    pub seal_stride: usize,
}

impl<'a> GroundTruthMaps<'a> {
    pub fn new(geometry: &'a SceneGeometry, cup: SuctionCupSpec) -> Self {
        Self { geometry, cup, seal_stride: 4 }
    }
}

impl MapProvider for GroundTruthMaps<'_> {
    fn seal(&self, view: &CaptureView) -> Result<SealMap> {
        render_seal_map(self.geometry, &view.intrinsics, &view.pose, &self.cup, self.seal_stride)
    }
    fn normals(&self, view: &CaptureView) -> Result<NormalMap> {
        Ok(render_normal_map(self.geometry, &view.intrinsics, &view.pose))
    }
    fn mask(&self, view: &CaptureView) -> Result<InstanceMask> {
        Ok(render_instance_mask(self.geometry, &view.intrinsics, &view.pose))
    }
}

#[derive(Clone, Debug)]
pub struct Detection {
    /// Top-k after repetitive avoidance, best first.
    pub poses: Vec<SuctionPoseResult>,
    /// Scored candidates before ranking.
    pub candidate_count: usize,
    pub volume: TsdfVolume,
    pub mesh: Option<SurfaceMesh>,
    pub scores: Option<ScoreVolume>,
    pub components: usize,
}

/// The full inference pass for one window. An empty surface is a valid outcome with no poses.
pub fn detect(
    window: &CaptureWindow,
    depth: &dyn DepthProvider,
    maps: &dyn MapProvider,
    grid: &GridSpec,
    cup: &SuctionCupSpec,
    config: &DetectorConfig,
    attempted: &[u32],
) -> Result<Detection> {
    config.validate()?;
    cup.validate()?;
    let volume = fuse(window, depth, grid)?;
    let mesh = match marching_cubes(&volume) {
        Ok(m) => m,
        Err(Error::EmptySurface) => {
            return Ok(Detection { poses: Vec::new(), candidate_count: 0, volume, mesh: None, scores: None, components: 0 });
        }
        Err(e) => return Err(e),
    };
    let (_, labels, scores) = score_volume(&volume, cup, config);

    let newest = window.views.iter().map(|v| v.lag).min().unwrap_or(0);
    let selected: Vec<(usize, &CaptureView)> = window
        .views
        .iter()
        .enumerate()
        .filter(|(_, v)| config.proposal_views == ProposalViews::All || v.lag == newest)
        .collect();
    let triangles = mesh.triangle_set();
    let per_view: Vec<Vec<SuctionPoseResult>> = selected
        .par_iter()
        .map(|&(vi, view)| -> Result<Vec<SuctionPoseResult>> {
            let seal = maps.seal(view)?;
            let normals = maps.normals(view)?;
            let mask = maps.mask(view)?;
            let dims = view.intrinsics.dims();
            for got in [seal.dims(), normals.dims(), mask.dims()] {
                if got != dims {
                    return Err(Error::DimensionMismatch { expected: dims, got });
                }
            }
            let denoised = crate::render::render_depth(&triangles, &view.intrinsics, &view.pose);
            let proposals = grid_sample_seal(&seal, config.stride, config.seal_threshold);
            let mut lifted = lift(&proposals, &denoised, &normals, vi, view);
            for c in &mut lifted {
                c.instance_id = *mask.get(c.pixel[0], c.pixel[1]);
            }
            Ok(lifted)
        })
        .collect::<Result<_>>()?;
    let Aabb { min: lo, max: hi } = grid.bounds();
    let m = config.edge_margin;
    let candidates: Vec<SuctionPoseResult> = per_view
        .into_iter()
        .flatten()
        .filter(|c| c.point.x >= lo.x + m && c.point.x <= hi.x - m && c.point.y >= lo.y + m && c.point.y <= hi.y - m)
        .collect();
    let mut scored = assign_scores(candidates, &scores);
    let candidate_count = scored.len();
    let width = window.views.first().map_or(0, |v| v.intrinsics.width);
    rank(&mut scored, width);
    let mut poses = repetitive_avoidance(scored, attempted);
    poses.truncate(config.k);
    Ok(Detection { poses, candidate_count, volume, mesh: Some(mesh), scores: Some(scores), components: labels.len() })
}

/// De-noised depth for one view, as used by [`detect`].
pub fn denoised_depth(mesh: &SurfaceMesh, view: &CaptureView) -> DepthMap {
    render_depth_from_mesh(mesh, &view.intrinsics, &view.pose)
}
