//! Small geometric kernels shared by rendering, annotation and reconstruction.

use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Axis-aligned box in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb::new(self.min.add_scalar(-pad), self.max.add_scalar(pad))
    }

    pub fn translated(&self, offset: &Vec3) -> Aabb {
        Aabb::new(self.min + offset, self.max + offset)
    }

    /// True when the boxes share interior volume (touching faces do not count).
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// Squared distance from a point to the box (0 inside).
    pub fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Slab test; returns the entry parameter if the ray meets the box within `[0, t_max]`.
    pub fn ray_entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            // NaN arises for a zero direction component on a slab boundary; min/max drop it.
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

/// Möller–Trumbore ray/triangle intersection (double sided). Hits with `t <= t_min` are ignored.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3], t_min: f64) -> Option<TriangleHit> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > t_min).then_some(TriangleHit { t, u, v })
}

pub fn triangle_normal(tri: &[Vec3; 3]) -> Vec3 {
    (tri[1] - tri[0]).cross(&(tri[2] - tri[0]))
}

pub fn triangle_area(tri: &[Vec3; 3]) -> f64 {
    0.5 * triangle_normal(tri).norm()
}

/// Closest point on a triangle to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Whether the closed segment `[p, q]` crosses the triangle.
pub fn segment_hits_triangle(p: &Vec3, q: &Vec3, tri: &[Vec3; 3]) -> bool {
    let d = q - p;
    let len = d.norm();
    if len == 0.0 {
        return false;
    }
    let dir = d / len;
    matches!(ray_triangle(p, &dir, tri, -1e-9), Some(h) if h.t <= len + 1e-9)
}

/// Triangle/triangle intersection via edge crossings. Coplanar overlaps are not reported.
pub fn triangles_intersect(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    (0..3).any(|i| segment_hits_triangle(&a[i], &a[(i + 1) % 3], b))
        || (0..3).any(|i| segment_hits_triangle(&b[i], &b[(i + 1) % 3], a))
}

/// Two unit vectors completing `d` to a right-handed orthonormal frame.
pub fn orthonormal_basis(d: &Vec3) -> (Vec3, Vec3) {
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = d.cross(&helper).normalize();
    let v = d.cross(&u);
    (u, v)
}

/// Finite solid cylinder: disc of `radius` at `base`, extruded `height` along unit `axis`.
#[derive(Clone, Copy, Debug)]
pub struct Cylinder {
    pub base: Vec3,
    pub axis: Vec3,
    pub radius: f64,
    pub height: f64,
}

impl Cylinder {
    /// Lowest z reached by the solid.
    pub fn min_z(&self) -> f64 {
        let radial = (1.0 - self.axis.z * self.axis.z).max(0.0).sqrt() * self.radius;
        self.base.z.min(self.base.z + self.height * self.axis.z) - radial
    }

    /// Exact triangle test: clip the triangle to the axial slab, then take the 2D distance of the
    /// clipped polygon to the axis.
    pub fn intersects_triangle(&self, tri: &[Vec3; 3]) -> bool {
        let (u, v) = orthonormal_basis(&self.axis);
        let local: Vec<[f64; 3]> = tri
            .iter()
            .map(|p| {
                let r = p - self.base;
                [r.dot(&u), r.dot(&v), r.dot(&self.axis)]
            })
            .collect();
        let clipped = clip_axial(&clip_axial(&local, 0.0, true), self.height, false);
        if clipped.is_empty() {
            return false;
        }
        polygon_origin_distance(&clipped) <= self.radius
    }

    /// Whether a point lies within the cylinder grown by `pad` radially and axially.
    pub fn contains_padded(&self, p: &Vec3, pad: f64) -> bool {
        let r = p - self.base;
        let a = r.dot(&self.axis);
        if a < -pad || a > self.height + pad {
            return false;
        }
        let radial_sq = r.norm_squared() - a * a;
        let lim = self.radius + pad;
        radial_sq <= lim * lim
    }
}

fn clip_axial(poly: &[[f64; 3]], plane: f64, keep_above: bool) -> Vec<[f64; 3]> {
    let inside = |p: &[f64; 3]| if keep_above { p[2] >= plane } else { p[2] <= plane };
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (ci, ni) = (inside(&cur), inside(&next));
        if ci {
            out.push(cur);
        }
        if ci != ni {
            let t = (plane - cur[2]) / (next[2] - cur[2]);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
                plane,
            ]);
        }
    }
    out
}

/// Distance from the 2D origin to a convex polygon given by its (x, y) coordinates.
fn polygon_origin_distance(poly: &[[f64; 3]]) -> f64 {
    let n = poly.len();
    if n >= 3 {
        let mut sign = 0.0f64;
        let mut inside = true;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let cross = (b[0] - a[0]) * (-a[1]) - (b[1] - a[1]) * (-a[0]);
            if cross.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                inside = false;
                break;
            }
        }
        if inside && sign != 0.0 {
            return 0.0;
        }
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        best = best.min(point_segment_distance_2d(a[0], a[1], b[0], b[1]));
    }
    best
}

fn point_segment_distance_2d(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (-(ax * dx + ay * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (ax + t * dx, ay + t * dy);
    (px * px + py * py).sqrt()
}

/// Rotation about +z.
pub fn yaw_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
