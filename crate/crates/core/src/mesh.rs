//! Triangle meshes: validation, mass properties, procedural primitives and the OBJ subset.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{triangle_area, Aabb, Mat3, Vec3};

pub const MIN_TRIANGLE_AREA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
    watertight: bool,
}

impl TriMesh {
    /// Validates indices and triangle areas, and detects watertightness from the edge structure.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k >= n) {
                return Err(Error::InvalidMesh(format!("triangle {i} indexes past {n} vertices")));
            }
            let area = triangle_area(&[vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]]);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::InvalidMesh(format!("triangle {i} is degenerate (area {area:e} mm²)")));
            }
        }
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        let mut mesh = Self { vertices, triangles, normals: None, watertight: false };
        mesh.watertight = mesh.boundary_edge_count() == 0;
        Ok(mesh)
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::InvalidMesh("normal count differs from vertex count".into()));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| triangle_area(&self.triangle(i))).sum()
    }

    /// Edges used by exactly one triangle.
    pub fn boundary_edge_count(&self) -> usize {
        edge_use_counts(&self.triangles).values().filter(|&&c| c == 1).count()
    }

    /// Signed volume (positive for outward-wound closed meshes).
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Uniform-density centre of mass: signed tetrahedra for watertight meshes, the area-weighted
    /// surface centroid otherwise.
    pub fn center_of_mass(&self) -> Vec3 {
        if self.watertight {
            let mut vol = 0.0;
            let mut acc = Vec3::zeros();
            for i in 0..self.triangles.len() {
                let [a, b, c] = self.triangle(i);
                let v = a.dot(&b.cross(&c)) / 6.0;
                vol += v;
                acc += (a + b + c) * (v / 4.0);
            }
            if vol.abs() > 1e-9 {
                return acc / vol;
            }
        }
        let mut area = 0.0;
        let mut acc = Vec3::zeros();
        for i in 0..self.triangles.len() {
            let tri = self.triangle(i);
            let a = triangle_area(&tri);
            area += a;
            acc += (tri[0] + tri[1] + tri[2]) * (a / 3.0);
        }
        acc / area
    }

    pub fn transformed(&self, rotation: &Mat3, translation: &Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| rotation * v + translation).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.as_ref().map(|ns| ns.iter().map(|n| rotation * n).collect()),
            watertight: self.watertight,
        }
    }

    /// Axis-aligned box centred at the origin.
    pub fn cuboid(extents: Vec3) -> TriMesh {
        let h = extents * 0.5;
        let vertices: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        // Outward winding.
        let quads: [[u32; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        TriMesh::new(vertices, triangles).expect("cuboid is valid")
    }

    pub fn cube(size: f64) -> TriMesh {
        Self::cuboid(Vec3::repeat(size))
    }

    /// UV sphere centred at the origin.
    pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> TriMesh {
        assert!(stacks >= 2 && slices >= 3);
        let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
        for i in 1..stacks {
            let phi = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let theta = std::f64::consts::TAU * j as f64 / slices as f64;
                vertices.push(radius * Vec3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()));
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, -radius));
        let bottom = (vertices.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        for j in 0..slices {
            triangles.push([bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        let normals = vertices.iter().map(|v| v.normalize()).collect();
        TriMesh::new(vertices, triangles).expect("sphere is valid").with_normals(normals).expect("normals")
    }

    /// Closed cylinder along z centred at the origin.
    pub fn cylinder(radius: f64, height: f64, slices: usize) -> TriMesh {
        assert!(slices >= 3);
        let h = 0.5 * height;
        let mut vertices = vec![Vec3::new(0.0, 0.0, -h), Vec3::new(0.0, 0.0, h)];
        for j in 0..slices {
            let theta = std::f64::consts::TAU * j as f64 / slices as f64;
            let (s, c) = theta.sin_cos();
            vertices.push(Vec3::new(radius * c, radius * s, -h));
            vertices.push(Vec3::new(radius * c, radius * s, h));
        }
        let lo = |j: usize| (2 + 2 * (j % slices)) as u32;
        let hi = |j: usize| (3 + 2 * (j % slices)) as u32;
        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, lo(j + 1), lo(j)]);
            triangles.push([1, hi(j), hi(j + 1)]);
            triangles.push([lo(j), lo(j + 1), hi(j + 1)]);
            triangles.push([lo(j), hi(j + 1), hi(j)]);
        }
        TriMesh::new(vertices, triangles).expect("cylinder is valid")
    }

    pub fn parse_obj(text: &str) -> Result<TriMesh> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let err = |msg: &str| Error::Parse { what: format!("OBJ line {}", lineno + 1), msg: msg.to_string() };
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse::<f64>().map_err(|e| err(&e.to_string())))
                        .collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(err("vertex needs three coordinates"));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            let k: i64 = head.parse().map_err(|_| err("bad face index"))?;
                            let k = if k < 0 { vertices.len() as i64 + k } else { k - 1 };
                            u32::try_from(k).map_err(|_| err("face index out of range"))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(err("only triangulated faces are supported"));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, triangles)
    }

    pub fn to_obj(&self) -> String {
        write_obj(&self.vertices, &self.triangles)
    }

    pub fn load_obj(path: &Path) -> Result<TriMesh> {
        Self::parse_obj(&std::fs::read_to_string(path)?)
    }
}

/// OBJ text for an indexed triangle list. Floats use shortest round-trip formatting.
pub fn write_obj(vertices: &[Vec3], triangles: &[[u32; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 48 + triangles.len() * 24);
    for v in vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn edge_use_counts(triangles: &[[u32; 3]]) -> HashMap<(u32, u32), u32> {
    let mut counts = HashMap::with_capacity(triangles.len() * 3 / 2);
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_properties() {
        let m = TriMesh::cube(80.0);
        assert!(m.is_watertight());
        assert_eq!(m.triangles.len(), 12);
        assert!((m.signed_volume() - 512_000.0).abs() < 1e-6);
        assert!((m.surface_area() - 6.0 * 6400.0).abs() < 1e-9);
        assert!(m.center_of_mass().norm() < 1e-9);
    }

    #[test]
    fn primitives_are_closed_and_outward() {
        let s = TriMesh::uv_sphere(50.0, 16, 32);
        assert!(s.is_watertight());
        assert!(s.signed_volume() > 0.0);
        let c = TriMesh::cylinder(30.0, 60.0, 24);
        assert!(c.is_watertight());
        assert!(c.signed_volume() > 0.0);
        let shifted = c.transformed(&Mat3::identity(), &Vec3::new(1.0, 2.0, 3.0));
        assert!((shifted.center_of_mass() - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-9);
    }

    #[test]
    fn open_mesh_uses_surface_centroid() {
        let m = TriMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(!m.is_watertight());
        assert_eq!(m.boundary_edge_count(), 3);
        assert!((m.center_of_mass() - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], vec![[0, 1, 2]]).is_err());
        assert!(TriMesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").is_err());
    }

    #[test]
    fn obj_roundtrip() {
        let m = TriMesh::uv_sphere(12.5, 6, 9);
        let back = TriMesh::parse_obj(&m.to_obj()).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.triangles, m.triangles);
        let slashed = TriMesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 -1\n").unwrap();
        assert_eq!(slashed.triangles, vec![[0, 1, 2]]);
    }
}
