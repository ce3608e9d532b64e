//! Bounding volume hierarchy over a triangle soup.

use crate::geom::{closest_point_on_triangle, ray_triangle, Aabb, TriangleHit, Vec3};

const LEAF_SIZE: usize = 4;
/// Boxes are padded so that triangles lying in an axis plane still have volume.
const BOX_PAD: f64 = 1e-7;

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: `[start, start + count)` into `order`. Interior: `start` is the right child, the
    /// left child follows the node directly.
    start: u32,
    count: u32,
}

#[derive(Clone, Debug, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

/// Triangles with an acceleration structure built over them.
#[derive(Clone, Debug, Default)]
pub struct TriangleSet {
    pub triangles: Vec<[Vec3; 3]>,
    bvh: Bvh,
}

impl TriangleSet {
    pub fn new(triangles: Vec<[Vec3; 3]>) -> Self {
        let bvh = Bvh::build(&triangles);
        Self { triangles, bvh }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.nodes.first().map(|n| n.bounds).unwrap_or_else(Aabb::empty)
    }

    /// Nearest hit with `t > t_min`, triangle index and hit record.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(usize, TriangleHit)> {
        self.bvh.raycast(&self.triangles, origin, dir, t_min, f64::INFINITY)
    }

    /// Every hit with `t > t_min`, unordered.
    pub fn all_hits(&self, origin: &Vec3, dir: &Vec3, t_min: f64, mut f: impl FnMut(usize, TriangleHit)) {
        let inv = dir.map(|c| 1.0 / c);
        self.bvh.visit(
            |b| b.ray_entry(origin, &inv, f64::INFINITY).is_some(),
            |i| {
                if let Some(h) = ray_triangle(origin, dir, &self.triangles[i], t_min) {
                    f(i, h);
                }
            },
        );
    }

    /// Closest surface point within `max_dist`, as `(triangle, point, distance)`.
    pub fn nearest_point(&self, p: &Vec3, max_dist: f64) -> Option<(usize, Vec3, f64)> {
        self.bvh.nearest_point(&self.triangles, p, max_dist)
    }

    /// Indices of triangles whose boxes overlap `query`.
    pub fn overlapping(&self, query: &Aabb, mut f: impl FnMut(usize)) {
        self.bvh.visit(|b| b.overlaps(query) || query.contains_box(b) || b.contains_box(query), |i| {
            let tb = Aabb::from_points(&self.triangles[i]).padded(BOX_PAD);
            if tb.overlaps(query) {
                f(i)
            }
        });
    }

    /// Brute-force nearest hit without the hierarchy; reference for tests.
    pub fn raycast_brute_force(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(usize, TriangleHit)> {
        let mut best: Option<(usize, TriangleHit)> = None;
        for (i, tri) in self.triangles.iter().enumerate() {
            if let Some(h) = ray_triangle(origin, dir, tri, t_min) {
                if best.is_none_or(|(_, b)| h.t < b.t) {
                    best = Some((i, h));
                }
            }
        }
        best
    }
}

impl Bvh {
    pub fn build(triangles: &[[Vec3; 3]]) -> Self {
        if triangles.is_empty() {
            return Self::default();
        }
        let boxes: Vec<Aabb> = triangles.iter().map(|t| Aabb::from_points(t).padded(BOX_PAD)).collect();
        let centroids: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        build_node(&mut nodes, &mut order, 0, &boxes, &centroids);
        Self { nodes, order }
    }

    fn visit(&self, mut enter: impl FnMut(&Aabb) -> bool, mut leaf: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !enter(&node.bounds) {
                continue;
            }
            if node.count > 0 {
                for &ti in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    leaf(ti as usize);
                }
            } else {
                stack.push(node.start as usize);
                stack.push(ni + 1);
            }
        }
    }

    fn raycast(
        &self,
        tris: &[[Vec3; 3]],
        origin: &Vec3,
        dir: &Vec3,
        t_min: f64,
        t_max: f64,
    ) -> Option<(usize, TriangleHit)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|c| 1.0 / c);
        let mut best: Option<(usize, TriangleHit)> = None;
        let mut limit = t_max;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.ray_entry(origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &ti in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some(h) = ray_triangle(origin, dir, &tris[ti as usize], t_min) {
                        // Ties resolve to the lowest triangle index, matching a linear scan.
                        let better = match best {
                            None => h.t <= limit,
                            Some((bi, b)) => h.t < b.t || (h.t == b.t && (ti as usize) < bi),
                        };
                        if better {
                            limit = h.t;
                            best = Some((ti as usize, h));
                        }
                    }
                }
            } else {
                let left = ni + 1;
                let right = node.start as usize;
                let tl = self.nodes[left].bounds.ray_entry(origin, &inv, limit);
                let tr = self.nodes[right].bounds.ray_entry(origin, &inv, limit);
                match (tl, tr) {
                    (Some(a), Some(b)) => {
                        // Push the farther child first so the nearer is processed next.
                        if a <= b {
                            stack.push(right);
                            stack.push(left);
                        } else {
                            stack.push(left);
                            stack.push(right);
                        }
                    }
                    (Some(_), None) => stack.push(left),
                    (None, Some(_)) => stack.push(right),
                    (None, None) => {}
                }
            }
        }
        best
    }

    fn nearest_point(&self, tris: &[[Vec3; 3]], p: &Vec3, max_dist: f64) -> Option<(usize, Vec3, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, Vec3, f64)> = None;
        let mut limit_sq = max_dist * max_dist;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.distance_sq(p) > limit_sq {
                continue;
            }
            if node.count > 0 {
                for &ti in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let q = closest_point_on_triangle(p, &tris[ti as usize]);
                    let d_sq = (q - p).norm_squared();
                    let better = match best {
                        None => d_sq <= limit_sq,
                        Some((bi, _, bd)) => d_sq < bd * bd || (d_sq == bd * bd && (ti as usize) < bi),
                    };
                    if better {
                        limit_sq = d_sq;
                        best = Some((ti as usize, q, d_sq.sqrt()));
                    }
                }
            } else {
                let left = ni + 1;
                let right = node.start as usize;
                let dl = self.nodes[left].bounds.distance_sq(p);
                let dr = self.nodes[right].bounds.distance_sq(p);
                if dl <= dr {
                    stack.push(right);
                    stack.push(left);
                } else {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        best
    }
}

fn build_node(nodes: &mut Vec<Node>, order: &mut [u32], offset: usize, boxes: &[Aabb], centroids: &[Vec3]) -> usize {
    let bounds = order.iter().fold(Aabb::empty(), |acc, &i| acc.union(&boxes[i as usize]));
    let index = nodes.len();
    nodes.push(Node { bounds, start: offset as u32, count: order.len() as u32 });
    if order.len() <= LEAF_SIZE {
        return index;
    }
    let cb = Aabb::from_points(order.iter().map(|&i| &centroids[i as usize]));
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] <= 0.0 {
        return index;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (lo, hi) = order.split_at_mut(mid);
    build_node(nodes, lo, offset, boxes, centroids);
    let right = build_node(nodes, hi, offset + mid, boxes, centroids);
    nodes[index].start = right as u32;
    nodes[index].count = 0;
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use crate::rng::SplitMix64;

    fn soup() -> TriangleSet {
        let mut tris = Vec::new();
        for (k, m) in [
            TriMesh::uv_sphere(60.0, 12, 24).transformed(&crate::geom::Mat3::identity(), &Vec3::new(-80.0, 0.0, 60.0)),
            TriMesh::cube(70.0).transformed(&crate::geom::yaw_rotation(0.3), &Vec3::new(70.0, 20.0, 35.0)),
            TriMesh::cylinder(25.0, 90.0, 20).transformed(&crate::geom::Mat3::identity(), &Vec3::new(0.0, 110.0, 45.0)),
        ]
        .iter()
        .enumerate()
        {
            let _ = k;
            for i in 0..m.triangles.len() {
                tris.push(m.triangle(i));
            }
        }
        TriangleSet::new(tris)
    }

    #[test]
    fn bvh_matches_brute_force_on_random_rays() {
        let set = soup();
        let mut rng = SplitMix64::new(11);
        let mut hits = 0;
        for _ in 0..10_000 {
            let origin = Vec3::new(rng.uniform(-300.0, 300.0), rng.uniform(-300.0, 300.0), rng.uniform(-50.0, 400.0));
            let target = Vec3::new(rng.uniform(-150.0, 150.0), rng.uniform(-80.0, 180.0), rng.uniform(0.0, 120.0));
            let dir = (target - origin).normalize();
            let a = set.raycast(&origin, &dir, 1e-9);
            let b = set.raycast_brute_force(&origin, &dir, 1e-9);
            match (a, b) {
                (None, None) => {}
                (Some((ia, ha)), Some((ib, hb))) => {
                    hits += 1;
                    assert!((ha.t - hb.t).abs() < 1e-6);
                    assert_eq!(ia, ib);
                }
                other => panic!("mismatch {other:?}"),
            }
        }
        assert!(hits > 3000);
    }

    #[test]
    fn nearest_point_matches_brute_force() {
        let set = soup();
        let mut rng = SplitMix64::new(5);
        for _ in 0..2000 {
            let p = Vec3::new(rng.uniform(-200.0, 200.0), rng.uniform(-100.0, 200.0), rng.uniform(-20.0, 200.0));
            let brute = set
                .triangles
                .iter()
                .map(|t| (closest_point_on_triangle(&p, t) - p).norm())
                .fold(f64::INFINITY, f64::min);
            let (_, _, d) = set.nearest_point(&p, f64::INFINITY).unwrap();
            assert!((d - brute).abs() < 1e-9);
            let bounded = set.nearest_point(&p, 20.0);
            assert_eq!(bounded.is_some(), brute <= 20.0);
        }
    }

    #[test]
    fn empty_set() {
        let set = TriangleSet::new(Vec::new());
        assert!(set.raycast(&Vec3::zeros(), &Vec3::z(), 0.0).is_none());
        assert!(set.nearest_point(&Vec3::zeros(), 1.0).is_none());
    }
}
