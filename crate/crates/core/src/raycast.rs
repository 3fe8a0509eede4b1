//! Exact ray casting against triangle meshes.
//!
//! [`intersect_triangle`] is the single ray/triangle predicate used by both
//! the image-order renderer here and the object-order rasterizer in
//! `mask`, so the two agree bit for bit on which triangle a pixel sees.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::geometry::{CameraModel, DepthMap};
use crate::image::RgbImage;
use crate::scene::LabeledMesh;

const MIN_T: f64 = 1e-9;
const LEAF_SIZE: usize = 4;

/// Light direction for flat Lambert shading (points towards the light).
pub const LIGHT_DIR: [f64; 3] = [0.3, -0.45, 0.84];
pub const AMBIENT: f64 = 0.35;

pub const NO_HIT: u32 = u32::MAX;

/// Barycentric slack that keeps shared edges watertight under rounding.
const BARY_EPS: f64 = 1e-10;

/// Möller–Trumbore; returns the ray parameter of the hit. Edges are
/// inclusive, so a ray through a shared edge hits both triangles.
#[inline]
pub fn intersect_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    v0: &Point3<f64>,
    v1: &Point3<f64>,
    v2: &Point3<f64>,
) -> Option<f64> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv;
    if !(-BARY_EPS..=1.0 + BARY_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -BARY_EPS || u + v > 1.0 + BARY_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > MIN_T).then_some(t)
}

/// Nearest-hit ordering shared by every caster: smaller `t` wins, ties go
/// to the smaller triangle index.
#[inline]
pub fn closer(t: f64, tri: u32, best_t: f64, best_tri: u32) -> bool {
    t < best_t || (t == best_t && tri < best_tri)
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &Aabb) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(o.min[k]);
            self.max[k] = self.max[k].max(o.max[k]);
        }
    }

    /// Slab test; returns the entry distance when the box is hit before `t_max`.
    #[inline]
    fn hit(&self, origin: &Point3<f64>, inv_dir: &[f64; 3], t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf keeps the previous bound.
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
        }
        (t0 <= t1).then_some(t0)
    }
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: `first..first + count` into `order`; inner: children at
    /// `first` and `first + 1`.
    first: u32,
    count: u32,
}

/// Bounding volume hierarchy over a mesh's triangles.
#[derive(Clone, Debug)]
pub struct Bvh<'m> {
    mesh: &'m LabeledMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: u32,
}

impl<'m> Bvh<'m> {
    pub fn build(mesh: &'m LabeledMesh) -> Self {
        let tri_bounds: Vec<Aabb> = mesh
            .triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                for &i in t {
                    b.grow(&mesh.vertices[i as usize]);
                }
                b
            })
            .collect();
        let centroids: Vec<[f64; 3]> = tri_bounds
            .iter()
            .map(|b| [0.5 * (b.min[0] + b.max[0]), 0.5 * (b.min[1] + b.max[1]), 0.5 * (b.min[2] + b.max[2])])
            .collect();
        let mut bvh = Bvh {
            mesh,
            nodes: Vec::new(),
            order: (0..mesh.triangles.len() as u32).collect(),
        };
        if mesh.triangles.is_empty() {
            return bvh;
        }
        bvh.nodes.push(Node {
            bounds: Aabb::empty(),
            first: 0,
            count: mesh.triangles.len() as u32,
        });
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (first, count) = (bvh.nodes[ni].first as usize, bvh.nodes[ni].count as usize);
            let mut bounds = Aabb::empty();
            let mut cb = Aabb::empty();
            for &t in &bvh.order[first..first + count] {
                bounds.merge(&tri_bounds[t as usize]);
                let c = centroids[t as usize];
                cb.grow(&Point3::new(c[0], c[1], c[2]));
            }
            bvh.nodes[ni].bounds = bounds;
            if count <= LEAF_SIZE {
                continue;
            }
            let axis = (0..3)
                .max_by(|&a, &b| (cb.max[a] - cb.min[a]).total_cmp(&(cb.max[b] - cb.min[b])))
                .unwrap();
            let mid = count / 2;
            bvh.order[first..first + count].select_nth_unstable_by(mid, |&a, &b| {
                centroids[a as usize][axis]
                    .total_cmp(&centroids[b as usize][axis])
                    .then(a.cmp(&b))
            });
            let left = bvh.nodes.len();
            bvh.nodes.push(Node {
                bounds: Aabb::empty(),
                first: first as u32,
                count: mid as u32,
            });
            bvh.nodes.push(Node {
                bounds: Aabb::empty(),
                first: (first + mid) as u32,
                count: (count - mid) as u32,
            });
            bvh.nodes[ni].first = left as u32;
            bvh.nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
        bvh
    }

    pub fn mesh(&self) -> &LabeledMesh {
        self.mesh
    }

    /// Closest hit along the ray, ties broken towards the lower triangle index.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = [1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z];
        let mut best_t = f64::INFINITY;
        let mut best_tri = NO_HIT;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.hit(origin, &inv, best_t).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.first as usize;
                for &tri in &self.order[s..s + node.count as usize] {
                    let [a, b, c] = self.mesh.triangles[tri as usize];
                    let v = &self.mesh.vertices;
                    if let Some(t) = intersect_triangle(origin, dir, &v[a as usize], &v[b as usize], &v[c as usize]) {
                        if closer(t, tri, best_t, best_tri) {
                            best_t = t;
                            best_tri = tri;
                        }
                    }
                }
            } else {
                let l = node.first;
                let r = l + 1;
                let dl = self.nodes[l as usize].bounds.hit(origin, &inv, best_t);
                let dr = self.nodes[r as usize].bounds.hit(origin, &inv, best_t);
                match (dl, dr) {
                    (Some(a), Some(b)) => {
                        // visit the nearer child first
                        if a <= b {
                            stack.push(r);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(r);
                        }
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        (best_tri != NO_HIT).then_some(Hit {
            t: best_t,
            triangle: best_tri,
        })
    }
}

pub fn triangle_normal(mesh: &LabeledMesh, tri: usize) -> Vector3<f64> {
    let [a, b, c] = mesh.triangles[tri];
    let v = &mesh.vertices;
    (v[b as usize] - v[a as usize])
        .cross(&(v[c as usize] - v[a as usize]))
        .try_normalize(0.0)
        .unwrap_or_else(Vector3::z)
}

/// Flat-shaded color of a triangle: vertex-0 albedo times two-sided Lambert.
pub fn shade(mesh: &LabeledMesh, tri: usize) -> [u8; 3] {
    let albedo = mesh
        .colors
        .as_ref()
        .map(|c| c[mesh.triangles[tri][0] as usize])
        .unwrap_or([200, 200, 200]);
    let l = Vector3::from(LIGHT_DIR).normalize();
    let k = AMBIENT + (1.0 - AMBIENT) * triangle_normal(mesh, tri).dot(&l).abs();
    albedo.map(|a| (a as f64 * k).round().clamp(0.0, 255.0) as u8)
}

/// Per-pixel ray-cast render of a mesh.
#[derive(Clone, Debug)]
pub struct Render {
    pub depth: DepthMap,
    pub color: RgbImage,
    /// Index of the visible triangle per pixel, or [`NO_HIT`].
    pub triangle: Vec<u32>,
}

pub fn render(bvh: &Bvh<'_>, cam: &CameraModel) -> Render {
    let (w, h) = cam.dims();
    let mesh = bvh.mesh();
    let rows: Vec<Vec<(f64, [u8; 3], u32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (o, d) = cam.pixel_ray(x, y);
                    match bvh.cast(&o, &d) {
                        Some(hit) => (hit.t, shade(mesh, hit.triangle as usize), hit.triangle),
                        None => (0.0, [0, 0, 0], NO_HIT),
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Render {
        depth: DepthMap::new(w, h),
        color: RgbImage::new(w, h),
        triangle: vec![NO_HIT; w * h],
    };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (t, c, tri)) in row.into_iter().enumerate() {
            let i = y * w + x;
            out.depth.data[i] = t;
            out.color.data[i] = c;
            out.triangle[i] = tri;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    fn quad(z: f64) -> LabeledMesh {
        LabeledMesh {
            vertices: vec![
                Point3::new(-5.0, -5.0, z),
                Point3::new(5.0, -5.0, z),
                Point3::new(5.0, 5.0, z),
                Point3::new(-5.0, 5.0, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            instance_id: vec![0; 4],
            clutter: vec![false; 4],
            colors: None,
        }
    }

    #[test]
    fn fronto_parallel_wall_depth_is_exact() {
        let mesh = quad(3.0);
        let bvh = Bvh::build(&mesh);
        let cam = CameraModel::new(80.0, 80.0, 31.5, 23.5, 64, 48, Matrix4::identity()).unwrap();
        let r = render(&bvh, &cam);
        for &d in &r.depth.data {
            assert!((d - 3.0).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn bvh_matches_linear_scan() {
        let mut mesh = LabeledMesh::default();
        let mut s = 12345u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for k in 0..300u32 {
            let c = Point3::new(rnd() * 2.0, rnd() * 2.0, 3.0 + rnd());
            for _ in 0..3 {
                mesh.vertices.push(c + Vector3::new(rnd() * 0.3, rnd() * 0.3, rnd() * 0.3));
                mesh.instance_id.push(0);
                mesh.clutter.push(false);
            }
            mesh.triangles.push([3 * k, 3 * k + 1, 3 * k + 2]);
        }
        let bvh = Bvh::build(&mesh);
        let o = Point3::origin();
        for i in 0..400 {
            let d = Vector3::new(rnd() * 0.7, rnd() * 0.7, 1.0);
            let mut best: Option<Hit> = None;
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let v = &mesh.vertices;
                if let Some(h) = intersect_triangle(&o, &d, &v[tri[0] as usize], &v[tri[1] as usize], &v[tri[2] as usize]) {
                    if best.map_or(true, |b| closer(h, t as u32, b.t, b.triangle)) {
                        best = Some(Hit { t: h, triangle: t as u32 });
                    }
                }
            }
            assert_eq!(bvh.cast(&o, &d), best, "ray {i}");
        }
    }
}
