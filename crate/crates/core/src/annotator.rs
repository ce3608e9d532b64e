//! Analytic suction model.
//!
//! A suction pose is a surface point `p` with an outward approach direction `d`. It is scored on
//! three axes and the overall score is their product:
//!
//! - **seal**: a ring of `m` rays is cast along `-d` from a standoff `h₀` above the pose, at cup
//!   radius around the axis, onto the source object. Any miss within `h₀ + δ_max` of travel gives
//!   0. Otherwise the score is `1 − maxᵢ |tᵢ − t_c| / δ_max` clamped at 0, where `t_c` is the hit
//!   distance of the centre ray.
//! - **wrench**: gravity torque about `p` from the object's centre of mass,
//!   `τ = |(com − p) × m g|`, scored `1 − τ / τ_max` clamped at 0.
//! - **collision**: 1 when a cylinder of the cup body's radius and height, extending from `p`
//!   along `d`, touches neither another object nor the belt half-space; 0 otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{backproject, CameraIntrinsics, RigidPose};
use crate::error::{Error, Result};
use crate::geom::{orthonormal_basis, Aabb, Cylinder, Vec3};
use crate::raster::{NormalMap, Raster, SealMap};
use crate::render::{render_hits, NormalFrame, render_normals};
use crate::rng::{seed_from, SplitMix64};
use crate::scene::{SceneGeometry, BELT_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuctionCupSpec {
    /// mm
    pub cup_radius: f64,
    pub ring_samples: usize,
    /// Largest rim deviation the cup can absorb, mm.
    pub flexibility: f64,
    /// mm
    pub collision_radius: f64,
    /// mm
    pub collision_height: f64,
    /// N·mm
    pub torque_limit: f64,
    /// mm/s², acting along −z.
    pub gravity: f64,
    /// Ray start height above the pose, mm.
    pub standoff: f64,
}

impl Default for SuctionCupSpec {
    fn default() -> Self {
        Self {
            cup_radius: 10.0,
            ring_samples: 24,
            flexibility: 5.0,
            collision_radius: 12.0,
            collision_height: 30.0,
            torque_limit: 100.0,
            gravity: 9810.0,
            standoff: 20.0,
        }
    }
}

impl SuctionCupSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.cup_radius,
            self.flexibility,
            self.collision_radius,
            self.collision_height,
            self.torque_limit,
            self.gravity,
            self.standoff,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("suction cup parameters must be positive".into()));
        }
        if self.ring_samples < 8 {
            return Err(Error::InvalidConfig("suction cup needs at least 8 ring samples".into()));
        }
        if self.collision_radius < self.cup_radius {
            return Err(Error::InvalidConfig("collision radius is smaller than the cup".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuctionCandidate {
    pub point: Vec3,
    /// Unit, pointing out of the surface.
    pub direction: Vec3,
    pub instance_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuctionLabel {
    pub seal: f64,
    pub wrench: f64,
    /// 1 = collision-free, 0 = colliding.
    pub collision: f64,
    pub overall: f64,
}

impl SuctionLabel {
    pub fn new(seal: f64, wrench: f64, collision: f64) -> Result<Self> {
        let overall = compose_score(seal, wrench, collision)?;
        Ok(Self { seal, wrench, collision, overall })
    }

    pub fn check(&self) -> Result<()> {
        let expected = compose_score(self.seal, self.wrench, self.collision)?;
        if expected != self.overall {
            return Err(Error::InvariantViolation(format!(
                "overall score {} differs from seal × wrench × collision = {expected}",
                self.overall
            )));
        }
        Ok(())
    }
}

/// `seal × wrench × collision`, with every component checked for range.
pub fn compose_score(seal: f64, wrench: f64, collision: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&seal) {
        return Err(Error::OutOfRange(format!("seal {seal}")));
    }
    if !(0.0..=1.0).contains(&wrench) {
        return Err(Error::OutOfRange(format!("wrench {wrench}")));
    }
    if collision != 0.0 && collision != 1.0 {
        return Err(Error::OutOfRange(format!("collision {collision} is not binary")));
    }
    Ok(seal * wrench * collision)
}

/// Area-weighted uniform samples, `per_object` per instance, directed along outward face normals.
pub fn sample_candidates(geom: &SceneGeometry, per_object: usize, seed: u64) -> Vec<SuctionCandidate> {
    let mut out = Vec::with_capacity(per_object * geom.instances.len());
    for inst in &geom.instances {
        let mut rng = SplitMix64::new(seed_from(&[seed, inst.instance_id as u64]));
        let mut cdf = Vec::with_capacity(inst.areas.len());
        let mut total = 0.0;
        for a in &inst.areas {
            total += a;
            cdf.push(total);
        }
        for _ in 0..per_object {
            let target = rng.next_f64() * total;
            let face = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
            let [a, b, c] = inst.triangles.triangles[face];
            let r1 = rng.next_f64().sqrt();
            let r2 = rng.next_f64();
            let point = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
            out.push(SuctionCandidate { point, direction: inst.outward_normal(face), instance_id: inst.instance_id });
        }
    }
    out
}

pub fn seal_score(geom: &SceneGeometry, cand: &SuctionCandidate, cup: &SuctionCupSpec) -> f64 {
    seal_score_with_phase(geom, cand, cup, 0.0)
}

/// Seal score with the ring rotated by `phase` radians about the approach axis.
pub fn seal_score_with_phase(geom: &SceneGeometry, cand: &SuctionCandidate, cup: &SuctionCupSpec, phase: f64) -> f64 {
    let Some(inst) = geom.instance(cand.instance_id) else {
        return 0.0;
    };
    let d = cand.direction;
    let (u, v) = orthonormal_basis(&d);
    let reach = cup.standoff + cup.flexibility;
    let top = cand.point + d * cup.standoff;
    let cast = |origin: Vec3| inst.raycast(&origin, &-d, 1e-9).map(|(_, h)| h.t).filter(|&t| t <= reach);
    let Some(t_center) = cast(top) else {
        return 0.0;
    };
    let m = cup.ring_samples;
    let mut max_dev = 0.0f64;
    for i in 0..m {
        let theta = phase + std::f64::consts::TAU * i as f64 / m as f64;
        let (s, c) = theta.sin_cos();
        let Some(t) = cast(top + (u * c + v * s) * cup.cup_radius) else {
            return 0.0;
        };
        max_dev = max_dev.max((t - t_center).abs());
    }
    (1.0 - max_dev / cup.flexibility).max(0.0)
}

/// Wrench score for a lever arm `com − p` and a mass in kg.
pub fn wrench_from_lever(lever: &Vec3, mass: f64, cup: &SuctionCupSpec) -> f64 {
    // mm/s² × kg / 1000 = N
    let force = Vec3::new(0.0, 0.0, -mass * cup.gravity * 1e-3);
    let torque = lever.cross(&force).norm();
    (1.0 - torque / cup.torque_limit).max(0.0)
}

pub fn wrench_score(geom: &SceneGeometry, cand: &SuctionCandidate, cup: &SuctionCupSpec) -> f64 {
    match geom.instance(cand.instance_id) {
        Some(inst) => wrench_from_lever(&(inst.center_of_mass - cand.point), inst.mass, cup),
        None => 0.0,
    }
}

pub fn cup_cylinder(point: &Vec3, direction: &Vec3, cup: &SuctionCupSpec) -> Cylinder {
    Cylinder { base: *point, axis: *direction, radius: cup.collision_radius, height: cup.collision_height }
}

pub fn cylinder_bounds(cyl: &Cylinder) -> Aabb {
    let top = cyl.base + cyl.axis * cyl.height;
    Aabb::from_points(&[cyl.base, top]).padded(cyl.radius)
}

/// 1 when the cup body clears every other instance and the belt.
pub fn collision_score(geom: &SceneGeometry, cand: &SuctionCandidate, cup: &SuctionCupSpec) -> f64 {
    let cyl = cup_cylinder(&cand.point, &cand.direction, cup);
    if geom.belt_plane && cyl.min_z() < 0.0 {
        return 0.0;
    }
    let bounds = cylinder_bounds(&cyl);
    for inst in &geom.instances {
        if inst.instance_id == cand.instance_id || !inst.bounds.padded(1e-6).overlaps(&bounds) {
            continue;
        }
        let mut hit = false;
        inst.triangles.overlapping(&bounds, |i| {
            if !hit && cyl.intersects_triangle(&inst.triangles.triangles[i]) {
                hit = true;
            }
        });
        if hit {
            return 0.0;
        }
    }
    1.0
}

pub fn evaluate(geom: &SceneGeometry, cand: &SuctionCandidate, cup: &SuctionCupSpec) -> SuctionLabel {
    let seal = seal_score(geom, cand, cup);
    let wrench = wrench_score(geom, cand, cup);
    let collision = collision_score(geom, cand, cup);
    SuctionLabel { seal, wrench, collision, overall: seal * wrench * collision }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub candidate: SuctionCandidate,
    pub label: SuctionLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    pub annotations: Vec<Annotation>,
}

/// Samples `per_object` candidates per instance and labels every one of them.
pub fn annotate_scene(geom: &SceneGeometry, cup: &SuctionCupSpec, per_object: usize, seed: u64) -> AnnotationSet {
    let candidates = sample_candidates(geom, per_object, seed);
    let annotations = candidates
        .par_iter()
        .map(|c| Annotation { candidate: *c, label: evaluate(geom, c, cup) })
        .collect();
    AnnotationSet { annotations }
}

/// World-frame normals of every visible surface; zero where the ray misses.
pub fn render_normal_map(geom: &SceneGeometry, intr: &CameraIntrinsics, pose: &RigidPose) -> NormalMap {
    render_normals(geom, intr, pose, NormalFrame::World)
}

/// Ground-truth seal map. Scores are evaluated exactly on every `stride`-th pixel of object
/// surfaces and bilinearly interpolated in between from samples on the same instance; pixels with
/// no such neighbours are evaluated directly. Belt and background pixels are invalid.
pub fn render_seal_map(
    geom: &SceneGeometry,
    intr: &CameraIntrinsics,
    pose: &RigidPose,
    cup: &SuctionCupSpec,
    stride: usize,
) -> Result<SealMap> {
    if stride == 0 {
        return Err(Error::InvalidConfig("seal map stride must be >= 1".into()));
    }
    let hits = render_hits(geom, intr, pose);
    let (w, h) = intr.dims();
    let candidate_at = |col: usize, row: usize| -> Option<SuctionCandidate> {
        let (hit, depth) = (*hits.get(col, row))?;
        if hit.instance_id == BELT_ID {
            return None;
        }
        let point = backproject(intr, pose, [col as f64, row as f64], depth).ok()?;
        Some(SuctionCandidate { point, direction: hit.normal, instance_id: hit.instance_id })
    };
    let samples: Vec<(usize, usize)> =
        (0..h).step_by(stride).flat_map(|r| (0..w).step_by(stride).map(move |c| (c, r))).collect();
    let sample_scores: Vec<Option<(u32, f64)>> = samples
        .par_iter()
        .map(|&(c, r)| candidate_at(c, r).map(|cand| (cand.instance_id, seal_score(geom, &cand, cup))))
        .collect();
    let mut grid: Raster<Option<(u32, f64)>> = Raster::filled(w, h, None);
    for (&(c, r), s) in samples.iter().zip(&sample_scores) {
        *grid.get_mut(c, r) = *s;
    }

    let mut scores = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    scores.par_chunks_mut(w).zip(valid.par_chunks_mut(w)).enumerate().for_each(|(row, (srow, vrow))| {
        for col in 0..w {
            let Some((hit, _)) = hits.get(col, row) else { continue };
            if hit.instance_id == BELT_ID {
                continue;
            }
            let id = hit.instance_id;
            let value = if col % stride == 0 && row % stride == 0 {
                grid.get(col, row).map(|(_, s)| s)
            } else {
                let c0 = col - col % stride;
                let r0 = row - row % stride;
                let fx = (col - c0) as f64 / stride as f64;
                let fy = (row - r0) as f64 / stride as f64;
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (dc, dr, wgt) in [
                    (0, 0, (1.0 - fx) * (1.0 - fy)),
                    (stride, 0, fx * (1.0 - fy)),
                    (0, stride, (1.0 - fx) * fy),
                    (stride, stride, fx * fy),
                ] {
                    let (c, r) = (c0 + dc, r0 + dr);
                    if c >= w || r >= h || wgt == 0.0 {
                        continue;
                    }
                    if let Some((sid, s)) = grid.get(c, r) {
                        if *sid == id {
                            acc += wgt * s;
                            wsum += wgt;
                        }
                    }
                }
                if wsum > 0.0 {
                    Some(acc / wsum)
                } else {
                    candidate_at(col, row).map(|cand| seal_score(geom, &cand, cup))
                }
            };
            if let Some(s) = value {
                srow[col] = s;
                vrow[col] = true;
            }
        }
    });
    Ok(SealMap { scores: Raster::from_vec(w, h, scores), valid: Raster::from_vec(w, h, valid) })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geom::{closest_point_on_triangle, Mat3};
    use crate::mesh::TriMesh;
    use crate::scene::{default_belt_bounds, AssetLibrary, ObjectAsset, ObjectInstance, Scene};

    fn scene_of(items: &[(&str, TriMesh, f64, Vec3)]) -> SceneGeometry {
        let lib = Arc::new(
            AssetLibrary::new(items.iter().map(|(id, m, mass, _)| ObjectAsset::new(*id, m.clone(), *mass, false).unwrap()).collect())
                .unwrap(),
        );
        let instances = items
            .iter()
            .enumerate()
            .map(|(i, (id, _, _, at))| ObjectInstance {
                asset: id.to_string(),
                pose: RigidPose::from_translation(*at),
                instance_id: i as u32 + 1,
            })
            .collect();
        Scene::new(lib, instances, true, default_belt_bounds()).unwrap().geometry().unwrap()
    }

    fn top_of_cube() -> (SceneGeometry, SuctionCandidate) {
        let g = scene_of(&[("cube", TriMesh::cube(80.0), 0.2, Vec3::new(0.0, 0.0, 40.0))]);
        (g, SuctionCandidate { point: Vec3::new(0.0, 0.0, 80.0), direction: Vec3::z(), instance_id: 1 })
    }

    #[test]
    fn compose_examples() {
        assert!((compose_score(0.8, 0.5, 1.0).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(compose_score(0.3, 0.9, 0.0).unwrap(), 0.0);
        assert_eq!(compose_score(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!(matches!(compose_score(1.2, 1.0, 1.0), Err(Error::OutOfRange(_))));
        assert!(matches!(compose_score(0.5, 1.0, 0.5), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn flat_top_face_seals_perfectly() {
        let (g, cand) = top_of_cube();
        assert_eq!(seal_score(&g, &cand, &SuctionCupSpec::default()), 1.0);
        assert_eq!(collision_score(&g, &cand, &SuctionCupSpec::default()), 1.0);
        assert_eq!(wrench_score(&g, &cand, &SuctionCupSpec::default()), 1.0);
    }

    #[test]
    fn sphere_seal_matches_sagitta() {
        let r: f64 = 50.0;
        let g = scene_of(&[("ball", TriMesh::uv_sphere(r, 90, 180), 0.2, Vec3::new(0.0, 0.0, r))]);
        // A pole cap would be a tessellation artefact; probe the equator-facing side instead.
        let dir = Vec3::new(1.0, 0.2, 0.3).normalize();
        let point = Vec3::new(0.0, 0.0, r) + dir * r;
        // Snap onto the tessellated surface along the normal.
        let inst = g.instance(1).unwrap();
        let (_, hit) = inst.raycast(&(point + dir * 10.0), &-dir, 0.0).unwrap();
        let cand = SuctionCandidate { point: point + dir * 10.0 - dir * hit.t, direction: dir, instance_id: 1 };
        let sagitta = r - (r * r - 100.0f64).sqrt();
        assert!((sagitta - 1.0102).abs() < 1e-4);
        let expected = 1.0 - sagitta / 5.0;
        let got = seal_score(&g, &cand, &SuctionCupSpec::default());
        assert!((got - expected).abs() < 0.02, "{got} vs {expected}");
    }

    #[test]
    fn overhanging_ring_breaks_seal() {
        let (g, _) = top_of_cube();
        let cand = SuctionCandidate { point: Vec3::new(38.0, 0.0, 80.0), direction: Vec3::z(), instance_id: 1 };
        assert_eq!(seal_score(&g, &cand, &SuctionCupSpec::default()), 0.0);
    }

    #[test]
    fn wrench_regression() {
        let cup = SuctionCupSpec::default();
        assert_eq!(wrench_from_lever(&Vec3::new(0.0, 0.0, -40.0), 0.2, &cup), 1.0);
        let s = wrench_from_lever(&Vec3::new(50.0, 0.0, 0.0), 0.2, &cup);
        // τ = 50 mm × 0.2 kg × 9.81 m/s² = 98.1 N·mm
        assert!((s - (1.0 - 98.1 / 100.0)).abs() < 1e-12);
        assert_eq!(wrench_from_lever(&Vec3::new(80.0, 0.0, 0.0), 0.2, &cup), 0.0);
    }

    #[test]
    fn facing_sides_of_close_cubes_collide() {
        // Gap of 5 mm between the cubes.
        let g = scene_of(&[
            ("a", TriMesh::cube(60.0), 0.2, Vec3::new(0.0, 0.0, 30.0)),
            ("b", TriMesh::cube(60.0), 0.2, Vec3::new(65.0, 0.0, 30.0)),
        ]);
        let cup = SuctionCupSpec::default();
        let facing = SuctionCandidate { point: Vec3::new(30.0, 0.0, 30.0), direction: Vec3::x(), instance_id: 1 };
        assert_eq!(collision_score(&g, &facing, &cup), 0.0);
        let away = SuctionCandidate { point: Vec3::new(-30.0, 0.0, 30.0), direction: -Vec3::x(), instance_id: 1 };
        assert_eq!(collision_score(&g, &away, &cup), 1.0);
    }

    #[test]
    fn tilted_cup_hits_belt() {
        let (g, _) = top_of_cube();
        let cup = SuctionCupSpec::default();
        let side = SuctionCandidate { point: Vec3::new(40.0, 0.0, 20.0), direction: Vec3::x(), instance_id: 1 };
        assert_eq!(collision_score(&g, &side, &cup), 1.0);
        let tilted = SuctionCandidate {
            point: Vec3::new(40.0, 0.0, 20.0),
            direction: Vec3::new(1.0, 0.0, -1.0).normalize(),
            instance_id: 1,
        };
        // Analytic: lowest point 20 − 30/√2 − 12/√2 < 0.
        assert!(cup_cylinder(&tilted.point, &tilted.direction, &cup).min_z() < 0.0);
        assert_eq!(collision_score(&g, &tilted, &cup), 0.0);
    }

    #[test]
    fn candidates_are_on_surface_and_area_uniform() {
        let g = scene_of(&[("cube", TriMesh::cube(80.0), 0.2, Vec3::new(0.0, 0.0, 40.0))]);
        let inst = g.instance(1).unwrap();
        for seed in 0..5 {
            let cands = sample_candidates(&g, 600, seed);
            assert_eq!(cands.len(), 600);
            let mut faces = [0usize; 6];
            for c in &cands {
                assert!((c.direction.norm() - 1.0).abs() < 1e-12);
                let d = inst
                    .triangles
                    .triangles
                    .iter()
                    .map(|t| (closest_point_on_triangle(&c.point, t) - c.point).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(d < 1e-3);
                let n = c.direction;
                let k = if n.x.abs() > 0.5 { 0 } else if n.y.abs() > 0.5 { 2 } else { 4 };
                faces[k + usize::from(n[k / 2] > 0.0)] += 1;
            }
            for f in faces {
                assert!((70..=130).contains(&f), "face count {f} seed {seed}");
            }
        }
        assert_eq!(sample_candidates(&g, 1, 3).len(), 1);
    }

    #[test]
    fn annotation_is_deterministic_and_consistent() {
        let g = scene_of(&[
            ("a", TriMesh::cube(60.0), 0.2, Vec3::new(0.0, 0.0, 30.0)),
            ("b", TriMesh::uv_sphere(40.0, 16, 32), 0.3, Vec3::new(90.0, 0.0, 40.0)),
        ]);
        let cup = SuctionCupSpec::default();
        let a = annotate_scene(&g, &cup, 50, 11);
        let b = annotate_scene(&g, &cup, 50, 11);
        assert_eq!(a, b);
        for ann in &a.annotations {
            ann.label.check().unwrap();
        }
    }

    #[test]
    fn ring_rotation_invariance() {
        let g = scene_of(&[("ball", TriMesh::uv_sphere(45.0, 48, 96), 0.2, Vec3::new(0.0, 0.0, 45.0))]);
        let cup = SuctionCupSpec::default();
        for c in sample_candidates(&g, 40, 2) {
            let base = seal_score_with_phase(&g, &c, &cup, 0.0);
            for phase in [0.05, 0.13, 0.2] {
                let s = seal_score_with_phase(&g, &c, &cup, phase);
                assert!((s - base).abs() <= 0.02, "{base} vs {s}");
            }
        }
    }

    #[test]
    fn plate_seal_map_is_one() {
        let plate = TriMesh::cuboid(Vec3::new(200.0, 160.0, 10.0));
        let g = scene_of(&[("plate", plate, 0.3, Vec3::new(0.0, 0.0, 5.0))]);
        let intr = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap();
        let pose = RigidPose::new(Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 400.0)).unwrap();
        let cup = SuctionCupSpec::default();
        let normals = render_normal_map(&g, &intr, &pose);
        for stride in [1, 3, 8] {
            let map = render_seal_map(&g, &intr, &pose, &cup, stride).unwrap();
            let mut n = 0;
            for i in 0..map.scores.len() {
                if !map.valid.data[i] {
                    continue;
                }
                // Interior of the top face: keep a cup radius plus one stride cell from the rim.
                let col = (i % 320) as f64;
                let row = (i / 320) as f64;
                let x = (col - 160.0) * 390.0 / 300.0;
                let y = (row - 120.0) * 390.0 / 300.0;
                if x.abs() < 75.0 && y.abs() < 55.0 {
                    assert_eq!(map.scores.data[i], 1.0);
                    assert!((normals.data[i] - Vec3::z()).norm() < 1e-12);
                    n += 1;
                }
            }
            assert!(n > 1000);
        }
    }

    #[test]
    fn seal_map_stride_consistency_on_sphere() {
        let g = scene_of(&[("ball", TriMesh::uv_sphere(80.0, 40, 80), 0.2, Vec3::new(0.0, 0.0, 80.0))]);
        let intr = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap();
        let pose = RigidPose::look_at(Vec3::new(0.0, -250.0, 450.0), Vec3::new(0.0, 0.0, 80.0), Vec3::z()).unwrap();
        let cup = SuctionCupSpec::default();
        let fine = render_seal_map(&g, &intr, &pose, &cup, 1).unwrap();
        let coarse = render_seal_map(&g, &intr, &pose, &cup, 4).unwrap();
        assert_eq!(fine.valid, coarse.valid);
        let (mut sum, mut n) = (0.0, 0);
        for i in 0..fine.scores.len() {
            if fine.valid.data[i] {
                sum += (fine.scores.data[i] - coarse.scores.data[i]).abs();
                n += 1;
            }
        }
        assert!(n > 1000);
        assert!(sum / (n as f64) < 0.05, "mean abs diff {}", sum / n as f64);
    }
}
