//! Objects on the belt: assets, placed instances, randomized layouts and the world-space geometry
//! used for ray queries.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belt::BeltConfig;
use crate::bvh::TriangleSet;
use crate::camera::{CameraIntrinsics, RigidPose};
use crate::error::{Error, Result};
use crate::geom::{triangle_normal, triangles_intersect, yaw_rotation, Aabb, TriangleHit, Vec3};
use crate::mesh::TriMesh;
use crate::rng::SplitMix64;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Instance id reported for the belt plane and for background pixels.
pub const BELT_ID: u32 = 0;
pub const BELT_FACE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectAsset {
    pub id: String,
    pub mesh: TriMesh,
    /// kg
    pub mass: f64,
    pub transparent: bool,
}

impl ObjectAsset {
    pub fn new(id: impl Into<String>, mesh: TriMesh, mass: f64, transparent: bool) -> Result<Self> {
        let id = id.into();
        if !(mass > 0.0) {
            return Err(Error::InvalidAsset(format!("{id}: mass must be positive")));
        }
        Ok(Self { id, mesh, mass, transparent })
    }

    /// Asset whose mass follows from the mesh volume and a density in g/cm³.
    pub fn with_density(id: impl Into<String>, mesh: TriMesh, density: f64, transparent: bool) -> Result<Self> {
        let mass = mesh.signed_volume().abs() * density * 1e-6;
        Self::new(id, mesh, mass, transparent)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssetLibrary {
    assets: Vec<ObjectAsset>,
}

impl AssetLibrary {
    pub fn new(assets: Vec<ObjectAsset>) -> Result<Self> {
        for (i, a) in assets.iter().enumerate() {
            if assets[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::InvalidAsset(format!("duplicate asset id {:?}", a.id)));
            }
        }
        Ok(Self { assets })
    }

    pub fn get(&self, id: &str) -> Result<&ObjectAsset> {
        self.assets.iter().find(|a| a.id == id).ok_or_else(|| Error::UnknownAsset(id.to_string()))
    }

    pub fn assets(&self) -> &[ObjectAsset] {
        &self.assets
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    /// Hand-scale convex objects (boxes, spheres, upright cylinders), roughly half transparent.
    pub fn convex_default() -> Self {
        let density = 0.25;
        let spec: [(&str, TriMesh, bool); 8] = [
            ("box_80x60x50", TriMesh::cuboid(Vec3::new(80.0, 60.0, 50.0)), false),
            ("box_120x80x40", TriMesh::cuboid(Vec3::new(120.0, 80.0, 40.0)), false),
            ("cube_50", TriMesh::cube(50.0), true),
            ("box_100x70x90", TriMesh::cuboid(Vec3::new(100.0, 70.0, 90.0)), true),
            ("sphere_35", TriMesh::uv_sphere(35.0, 16, 32), true),
            ("sphere_50", TriMesh::uv_sphere(50.0, 20, 40), false),
            ("cylinder_30x80", TriMesh::cylinder(30.0, 80.0, 32), true),
            ("cylinder_40x50", TriMesh::cylinder(40.0, 50.0, 32), false),
        ];
        let assets = spec
            .into_iter()
            .map(|(id, mesh, transparent)| ObjectAsset::with_density(id, mesh, density, transparent).expect("asset"))
            .collect();
        Self::new(assets).expect("unique ids")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub asset: String,
    /// Object-to-world.
    pub pose: RigidPose,
    pub instance_id: u32,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub assets: Arc<AssetLibrary>,
    pub instances: Vec<ObjectInstance>,
    /// Whether the z = 0 belt surface takes part in rendering and collision.
    pub belt_plane: bool,
    pub bounds: Aabb,
}

impl PartialEq for Scene {
    fn eq(&self, other: &Self) -> bool {
        self.instances == other.instances && self.belt_plane == other.belt_plane && self.bounds == other.bounds
    }
}

impl Scene {
    pub fn new(assets: Arc<AssetLibrary>, instances: Vec<ObjectInstance>, belt_plane: bool, bounds: Aabb) -> Result<Self> {
        for (i, inst) in instances.iter().enumerate() {
            assets.get(&inst.asset)?;
            inst.pose.check()?;
            if inst.instance_id == BELT_ID || instances[..i].iter().any(|o| o.instance_id == inst.instance_id) {
                return Err(Error::InvalidAsset(format!("instance id {} is reserved or duplicated", inst.instance_id)));
            }
        }
        Ok(Self { assets, instances, belt_plane, bounds })
    }

    pub fn empty(assets: Arc<AssetLibrary>, bounds: Aabb) -> Self {
        Self { assets, instances: Vec::new(), belt_plane: true, bounds }
    }

    pub fn instance(&self, id: u32) -> Option<&ObjectInstance> {
        self.instances.iter().find(|i| i.instance_id == id)
    }

    pub fn world_mesh(&self, inst: &ObjectInstance) -> Result<TriMesh> {
        let asset = self.assets.get(&inst.asset)?;
        Ok(asset.mesh.transformed(inst.pose.rotation(), &inst.pose.center))
    }

    pub fn translated(&self, offset: &Vec3) -> Scene {
        let mut s = self.clone();
        for inst in &mut s.instances {
            inst.pose = inst.pose.translated(offset);
        }
        s
    }

    pub fn without(&self, instance_id: u32) -> Scene {
        let mut s = self.clone();
        s.instances.retain(|i| i.instance_id != instance_id);
        s
    }

    pub fn geometry(&self) -> Result<SceneGeometry> {
        SceneGeometry::build(self)
    }
}

/// All instances moved by the belt over `dt` seconds.
pub fn scene_at_time(scene: &Scene, belt: &BeltConfig, dt: f64) -> Scene {
    scene.translated(&belt.displacement(dt))
}

/// World-space triangles of one instance plus its mass properties.
#[derive(Clone, Debug)]
pub struct InstanceGeometry {
    pub instance_id: u32,
    pub asset: String,
    pub triangles: TriangleSet,
    pub watertight: bool,
    pub mass: f64,
    pub center_of_mass: Vec3,
    pub transparent: bool,
    pub bounds: Aabb,
    /// Surface area of each triangle; used for area-weighted sampling.
    pub areas: Vec<f64>,
}

impl InstanceGeometry {
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(usize, TriangleHit)> {
        self.triangles.raycast(origin, dir, t_min)
    }

    /// Ray-parity inside test; only meaningful for watertight meshes.
    pub fn contains(&self, p: &Vec3) -> bool {
        if !self.bounds.contains(p) {
            return false;
        }
        let mut count = 0u32;
        self.triangles.all_hits(p, &PARITY_DIR, 0.0, |_, _| count += 1);
        count % 2 == 1
    }

    pub fn outward_normal(&self, face: usize) -> Vec3 {
        triangle_normal(&self.triangles.triangles[face]).normalize()
    }
}

/// Fixed, axis-skewed direction for parity rays so they avoid mesh edges of axis-aligned shapes.
pub const PARITY_DIR: Vec3 = Vec3::new(0.363_803_637_6, 0.469_101_012_5, 0.805_031_624_4);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Instance id, or [`BELT_ID`] for the belt plane.
    pub instance_id: u32,
    pub face: u32,
    /// Unit geometric normal facing the ray origin.
    pub normal: Vec3,
    pub barycentric: [f64; 3],
}

/// Anything a camera ray can be cast against.
pub trait RayTarget: Sync {
    fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit>;
}

#[derive(Clone, Debug)]
pub struct SceneGeometry {
    pub instances: Vec<InstanceGeometry>,
    all: TriangleSet,
    /// `(slot in instances, face within instance)` per triangle of `all`.
    owners: Vec<(u32, u32)>,
    pub belt_plane: bool,
}

impl SceneGeometry {
    pub fn build(scene: &Scene) -> Result<Self> {
        let mut instances = Vec::with_capacity(scene.instances.len());
        let mut all = Vec::new();
        let mut owners = Vec::new();
        for (slot, inst) in scene.instances.iter().enumerate() {
            let asset = scene.assets.get(&inst.asset)?;
            let mesh = asset.mesh.transformed(inst.pose.rotation(), &inst.pose.center);
            let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|i| mesh.triangle(i)).collect();
            for (f, t) in tris.iter().enumerate() {
                all.push(*t);
                owners.push((slot as u32, f as u32));
            }
            let areas = tris.iter().map(crate::geom::triangle_area).collect();
            instances.push(InstanceGeometry {
                instance_id: inst.instance_id,
                asset: inst.asset.clone(),
                bounds: mesh.bounds(),
                watertight: mesh.is_watertight(),
                mass: asset.mass,
                center_of_mass: mesh.center_of_mass(),
                transparent: asset.transparent,
                triangles: TriangleSet::new(tris),
                areas,
            });
        }
        Ok(Self { instances, all: TriangleSet::new(all), owners, belt_plane: scene.belt_plane })
    }

    pub fn instance(&self, id: u32) -> Option<&InstanceGeometry> {
        self.instances.iter().find(|g| g.instance_id == id)
    }

    pub fn triangle_count(&self) -> usize {
        self.all.len()
    }

    /// Closest object surface point within `max_dist`: `(instance id, point, distance, outward normal)`.
    pub fn nearest_surface(&self, p: &Vec3, max_dist: f64) -> Option<(u32, Vec3, f64, Vec3)> {
        self.all.nearest_point(p, max_dist).map(|(tri, q, d)| {
            let (slot, face) = self.owners[tri];
            let g = &self.instances[slot as usize];
            (g.instance_id, q, d, g.outward_normal(face as usize))
        })
    }

    /// Whether `p` lies inside any object (parity) or below the belt plane.
    pub fn inside(&self, p: &Vec3) -> bool {
        (self.belt_plane && p.z < 0.0) || self.instances.iter().any(|g| g.contains(p))
    }

    fn make_hit(&self, tri: usize, h: TriangleHit, dir: &Vec3) -> Hit {
        let (slot, face) = self.owners[tri];
        let n = triangle_normal(&self.all.triangles[tri]).normalize();
        let normal = if n.dot(dir) > 0.0 { -n } else { n };
        Hit {
            t: h.t,
            instance_id: self.instances[slot as usize].instance_id,
            face,
            normal,
            barycentric: [1.0 - h.u - h.v, h.u, h.v],
        }
    }

    /// Nearest hit by exhaustive search over every triangle; reference for tests.
    pub fn raycast_brute_force(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let tri_hit = self.all.raycast_brute_force(origin, dir, RAY_EPS).map(|(i, h)| self.make_hit(i, h, dir));
        nearest(tri_hit, self.belt_hit(origin, dir))
    }

    fn belt_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        if !self.belt_plane || dir.z == 0.0 {
            return None;
        }
        let t = -origin.z / dir.z;
        (t > RAY_EPS).then(|| Hit {
            t,
            instance_id: BELT_ID,
            face: BELT_FACE,
            normal: if dir.z < 0.0 { Vec3::z() } else { -Vec3::z() },
            barycentric: [1.0, 0.0, 0.0],
        })
    }
}

const RAY_EPS: f64 = 1e-9;

fn nearest(a: Option<Hit>, b: Option<Hit>) -> Option<Hit> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.t < x.t { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

impl RayTarget for SceneGeometry {
    fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let tri_hit = self.all.raycast(origin, dir, RAY_EPS).map(|(i, h)| self.make_hit(i, h, dir));
        nearest(tri_hit, self.belt_hit(origin, dir))
    }
}

/// A bare triangle set renders as a single instance (id 1), faces numbered by triangle.
impl RayTarget for TriangleSet {
    fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        TriangleSet::raycast(self, origin, dir, RAY_EPS).map(|(i, h)| {
            let n = triangle_normal(&self.triangles[i]).normalize();
            Hit {
                t: h.t,
                instance_id: 1,
                face: i as u32,
                normal: if n.dot(dir) > 0.0 { -n } else { n },
                barycentric: [1.0 - h.u - h.v, h.u, h.v],
            }
        })
    }
}

/// Layout randomization ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationSpec {
    /// Inclusive range of object counts.
    pub object_count: [usize; 2],
    /// Footprint region `[xmin, xmax, ymin, ymax]` in mm; whole objects stay inside it.
    pub region: [f64; 4],
    /// Radians, inclusive range.
    pub yaw_range: [f64; 2],
    /// Per-axis uniform jitter of camera positions, ± mm.
    pub camera_position_jitter: f64,
    /// Per-axis uniform jitter of camera look-at targets, ± mm.
    pub camera_target_jitter: f64,
    /// Default seed for runs that do not override it.
    pub seed: u64,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self {
            object_count: [3, 5],
            region: [-240.0, 240.0, -190.0, 190.0],
            yaw_range: [0.0, std::f64::consts::TAU],
            camera_position_jitter: 0.0,
            camera_target_jitter: 0.0,
            seed: 0,
        }
    }
}

impl RandomizationSpec {
    pub fn validate(&self, belt_bounds: &Aabb) -> Result<()> {
        let [c0, c1] = self.object_count;
        let [x0, x1, y0, y1] = self.region;
        if c0 > c1 {
            return Err(Error::InvalidRandomization("object count range is empty".into()));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::InvalidRandomization("placement region is empty".into()));
        }
        if !(self.yaw_range[0] <= self.yaw_range[1]) {
            return Err(Error::InvalidRandomization("yaw range is empty".into()));
        }
        if !(self.camera_position_jitter >= 0.0 && self.camera_target_jitter >= 0.0) {
            return Err(Error::InvalidRandomization("camera jitter must be non-negative".into()));
        }
        let b = belt_bounds;
        if x0 < b.min.x || x1 > b.max.x || y0 < b.min.y || y1 > b.max.y {
            return Err(Error::InvalidRandomization("placement region leaves the belt bounds".into()));
        }
        Ok(())
    }
}

/// Belt area scenes live on unless configured otherwise.
pub fn default_belt_bounds() -> Aabb {
    Aabb::new(Vec3::new(-1500.0, -250.0, 0.0), Vec3::new(1500.0, 250.0, 400.0))
}

/// Rejection-samples a non-interpenetrating layout of yaw-rotated objects resting on z = 0.
pub fn generate_scene(spec: &RandomizationSpec, assets: Arc<AssetLibrary>, bounds: Aabb, seed: u64) -> Result<Scene> {
    if assets.is_empty() {
        return Err(Error::InvalidRandomization("asset list is empty".into()));
    }
    spec.validate(&bounds)?;
    let mut rng = SplitMix64::new(seed);
    let count = rng.range_inclusive(spec.object_count[0] as u64, spec.object_count[1] as u64) as usize;
    let [x0, x1, y0, y1] = spec.region;
    let mut placed: Vec<(TriMesh, Aabb)> = Vec::with_capacity(count);
    let mut instances = Vec::with_capacity(count);
    for index in 0..count {
        let asset = &assets.assets()[rng.index(assets.len())];
        let mut accepted = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let yaw = rng.uniform(spec.yaw_range[0], spec.yaw_range[1]);
            let ux = rng.next_f64();
            let uy = rng.next_f64();
            let rot = yaw_rotation(yaw);
            let local = Aabb::from_points(asset.mesh.vertices.iter().map(|v| rot * v).collect::<Vec<_>>().iter());
            let (lo_x, hi_x) = (x0 - local.min.x, x1 - local.max.x);
            let (lo_y, hi_y) = (y0 - local.min.y, y1 - local.max.y);
            if lo_x > hi_x || lo_y > hi_y {
                continue;
            }
            let t = Vec3::new(lo_x + (hi_x - lo_x) * ux, lo_y + (hi_y - lo_y) * uy, -local.min.z);
            let mesh = asset.mesh.transformed(&rot, &t);
            let bb = mesh.bounds();
            if placed.iter().any(|(m, b)| b.overlaps(&bb) && meshes_interpenetrate(m, &mesh)) {
                continue;
            }
            accepted = Some((RigidPose::new(rot, t)?, mesh, bb));
            break;
        }
        let (pose, mesh, bb) = accepted.ok_or(Error::PlacementFailure { index, attempts: MAX_PLACEMENT_ATTEMPTS })?;
        placed.push((mesh, bb));
        instances.push(ObjectInstance { asset: asset.id.clone(), pose, instance_id: index as u32 + 1 });
    }
    Scene::new(assets, instances, true, bounds)
}

/// Surface crossings or one mesh containing a vertex of the other.
pub fn meshes_interpenetrate(a: &TriMesh, b: &TriMesh) -> bool {
    let (ba, bb) = (a.bounds(), b.bounds());
    if !ba.overlaps(&bb) {
        return false;
    }
    let set_b = TriangleSet::new((0..b.triangles.len()).map(|i| b.triangle(i)).collect());
    for i in 0..a.triangles.len() {
        let ta = a.triangle(i);
        let tb_box = Aabb::from_points(&ta).padded(1e-6);
        let mut hit = false;
        set_b.overlapping(&tb_box, |j| {
            if !hit && triangles_intersect(&ta, &set_b.triangles[j]) {
                hit = true;
            }
        });
        if hit {
            return true;
        }
    }
    let set_a = TriangleSet::new((0..a.triangles.len()).map(|i| a.triangle(i)).collect());
    let inside = |set: &TriangleSet, bounds: &Aabb, p: &Vec3| {
        if !bounds.contains(p) {
            return false;
        }
        let mut n = 0;
        set.all_hits(p, &PARITY_DIR, 0.0, |_, _| n += 1);
        n % 2 == 1
    };
    a.vertices.iter().any(|v| inside(&set_b, &bb, v)) || b.vertices.iter().any(|v| inside(&set_a, &ba, v))
}

/// Nominal camera placement before jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    pub intrinsics: CameraIntrinsics,
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

impl CameraMount {
    pub fn pose(&self) -> Result<RigidPose> {
        RigidPose::look_at(Vec3::from(self.eye), Vec3::from(self.target), Vec3::z())
    }
}

/// Two cameras mounted diagonally over the reconstruction zone, 320×240.
pub fn default_stereo_rig() -> [CameraMount; 2] {
    let intr = CameraIntrinsics::from_fov(320, 240, 70.0).expect("valid intrinsics");
    [
        CameraMount { intrinsics: intr, eye: [-350.0, -420.0, 620.0], target: [-120.0, 0.0, 0.0] },
        CameraMount { intrinsics: intr, eye: [150.0, 420.0, 620.0], target: [-120.0, 0.0, 0.0] },
    ]
}

/// Camera poses with randomized positions and look-at targets.
pub fn jitter_rig(mounts: &[CameraMount], spec: &RandomizationSpec, seed: u64) -> Result<Vec<(CameraIntrinsics, RigidPose)>> {
    let mut rng = SplitMix64::new(crate::rng::seed_from(&[seed, 0xCA3E_7A]));
    mounts
        .iter()
        .map(|m| {
            let mut j = |r: f64| if r > 0.0 { rng.uniform(-r, r) } else { 0.0 };
            let eye = Vec3::from(m.eye)
                + Vec3::new(j(spec.camera_position_jitter), j(spec.camera_position_jitter), j(spec.camera_position_jitter));
            let target = Vec3::from(m.target)
                + Vec3::new(j(spec.camera_target_jitter), j(spec.camera_target_jitter), j(spec.camera_target_jitter));
            Ok((m.intrinsics, RigidPose::look_at(eye, target, Vec3::z())?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_lib(size: f64) -> Arc<AssetLibrary> {
        Arc::new(AssetLibrary::new(vec![ObjectAsset::new("cube", TriMesh::cube(size), 0.2, false).unwrap()]).unwrap())
    }

    #[test]
    fn same_seed_same_scene() {
        let lib = Arc::new(AssetLibrary::convex_default());
        let spec = RandomizationSpec::default();
        let a = generate_scene(&spec, lib.clone(), default_belt_bounds(), 7).unwrap();
        let b = generate_scene(&spec, lib.clone(), default_belt_bounds(), 7).unwrap();
        assert_eq!(serde_json::to_string(&a.instances).unwrap(), serde_json::to_string(&b.instances).unwrap());
        let c = generate_scene(&spec, lib, default_belt_bounds(), 8).unwrap();
        assert_ne!(a.instances, c.instances);
    }

    #[test]
    fn single_cube_rests_on_belt() {
        let spec = RandomizationSpec { object_count: [1, 1], ..Default::default() };
        let scene = generate_scene(&spec, cube_lib(80.0), default_belt_bounds(), 3).unwrap();
        assert_eq!(scene.instances.len(), 1);
        let mesh = scene.world_mesh(&scene.instances[0]).unwrap();
        let min_z = mesh.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        assert!(min_z.abs() < 0.1);
    }

    #[test]
    fn overfull_region_fails() {
        // 8 × 80² mm² of footprint cannot fit in 200 × 200 mm².
        let spec = RandomizationSpec { object_count: [8, 8], region: [-100.0, 100.0, -100.0, 100.0], ..Default::default() };
        let err = generate_scene(&spec, cube_lib(80.0), default_belt_bounds(), 1).unwrap_err();
        assert!(matches!(err, Error::PlacementFailure { .. }));
    }

    #[test]
    fn generated_layouts_do_not_interpenetrate() {
        let lib = Arc::new(AssetLibrary::convex_default());
        let spec = RandomizationSpec { object_count: [5, 6], ..Default::default() };
        for seed in 0..10 {
            let scene = generate_scene(&spec, lib.clone(), default_belt_bounds(), seed).unwrap();
            let meshes: Vec<TriMesh> = scene.instances.iter().map(|i| scene.world_mesh(i).unwrap()).collect();
            for i in 0..meshes.len() {
                let min_z = meshes[i].vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
                assert!(min_z.abs() < 0.1);
                for j in 0..i {
                    assert!(!meshes_interpenetrate(&meshes[i], &meshes[j]), "seed {seed}: {i} vs {j}");
                }
            }
        }
    }

    #[test]
    fn interpenetration_cases() {
        let a = TriMesh::cube(50.0);
        let far = a.transformed(&crate::geom::Mat3::identity(), &Vec3::new(60.0, 0.0, 0.0));
        let near = a.transformed(&yaw_rotation(0.4), &Vec3::new(40.0, 3.0, 0.0));
        let inner = TriMesh::cube(10.0);
        assert!(!meshes_interpenetrate(&a, &far));
        assert!(meshes_interpenetrate(&a, &near));
        assert!(meshes_interpenetrate(&a, &inner));
    }

    #[test]
    fn scene_at_time_shifts_every_vertex() {
        let spec = RandomizationSpec { object_count: [2, 2], ..Default::default() };
        let lib = Arc::new(AssetLibrary::convex_default());
        let scene = generate_scene(&spec, lib, default_belt_bounds(), 4).unwrap();
        let belt = BeltConfig::default();
        assert_eq!(scene_at_time(&scene, &belt, 0.0), scene);
        let moved = scene_at_time(&scene, &belt, 1.0);
        for (a, b) in scene.instances.iter().zip(&moved.instances) {
            let ma = scene.world_mesh(a).unwrap();
            let mb = moved.world_mesh(b).unwrap();
            for (va, vb) in ma.vertices.iter().zip(&mb.vertices) {
                assert!((vb - va - Vec3::new(100.0, 0.0, 0.0)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn parity_inside_test() {
        let lib = cube_lib(80.0);
        let scene = Scene::new(
            lib,
            vec![ObjectInstance { asset: "cube".into(), pose: RigidPose::from_translation(Vec3::new(0.0, 0.0, 40.0)), instance_id: 1 }],
            true,
            default_belt_bounds(),
        )
        .unwrap();
        let g = scene.geometry().unwrap();
        assert!(g.inside(&Vec3::new(0.0, 0.0, 40.0)));
        assert!(g.inside(&Vec3::new(39.0, -39.0, 1.0)));
        assert!(!g.inside(&Vec3::new(41.0, 0.0, 40.0)));
        assert!(g.inside(&Vec3::new(200.0, 0.0, -1.0)));
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let spec = RandomizationSpec { camera_position_jitter: 20.0, camera_target_jitter: 10.0, ..Default::default() };
        let rig = default_stereo_rig();
        let a = jitter_rig(&rig, &spec, 9).unwrap();
        let b = jitter_rig(&rig, &spec, 9).unwrap();
        assert_eq!(a, b);
        for ((_, pose), m) in a.iter().zip(&rig) {
            let d = pose.center - Vec3::from(m.eye);
            assert!(d.iter().all(|c| c.abs() <= 20.0));
        }
    }
}
