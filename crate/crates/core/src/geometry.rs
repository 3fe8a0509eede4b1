//! Pinhole camera math and the pairwise depth warp used by every
//! cross-frame consistency rule.
//!
//! Conventions: camera frame is x right, y down, z forward; a pixel index
//! `(x, y)` has its center at continuous coordinate `(x, y)`; depth is the
//! metric z coordinate in the camera frame and `0.0` marks an invalid pixel.
//! The pose stored on a [`CameraModel`] maps camera coordinates to world
//! coordinates.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Largest relative depth step between neighbouring pixels that is still
/// treated as one continuous surface when estimating a local tangent plane.
const CONTINUITY_REL: f64 = 0.1;

/// Largest relative change the tangent-plane correction may apply to a
/// splatted depth before falling back to the raw projected depth.
const MAX_CORRECTION_REL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rigid camera-to-world transform.
    pub pose: Matrix4<f64>,
}

/// On-disk camera record: `pose` is 16 row-major floats.
#[derive(Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    pose: Vec<f64>,
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        if f.pose.len() != 16 {
            return Err(Error::InvalidCamera(format!(
                "pose has {} entries, expected 16",
                f.pose.len()
            )));
        }
        let pose = Matrix4::from_row_slice(&f.pose);
        CameraModel::new(f.fx, f.fy, f.cx, f.cy, f.width, f.height, pose)
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        let mut pose = Vec::with_capacity(16);
        for r in 0..4 {
            for col in 0..4 {
                pose.push(c.pose[(r, col)]);
            }
        }
        CameraFile {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            pose,
        }
    }
}

/// A continuous projection of a 3D point into an image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: Matrix4<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world up
    /// direction (image y points against it).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("view direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let mut pose = Matrix4::identity();
        pose.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        pose.fixed_view_mut::<3, 1>(0, 1).copy_from(&down);
        pose.fixed_view_mut::<3, 1>(0, 2).copy_from(&forward);
        pose.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye.coords);
        Self::new(fx, fy, cx, cy, width, height, pose)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCamera(msg));
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be nonzero".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("principal point ({}, {}) outside image", self.cx, self.cy));
        }
        if self.pose.iter().any(|v| !v.is_finite()) {
            return bad("pose has non-finite entries".into());
        }
        let last = self.pose.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return bad("pose last row must be [0, 0, 0, 1]".into());
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return bad(format!("rotation not orthonormal (error {err:e})"));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return bad(format!("rotation determinant {det} != 1"));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.pose.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation() * p + self.center().coords
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation().transpose() * (p - self.center()))
    }

    /// Continuous projection of a world point; `None` when the point is not
    /// strictly in front of the camera.
    pub fn project(&self, world: &Point3<f64>) -> Option<Projection> {
        let c = self.world_to_camera(world);
        self.project_camera(&c)
    }

    pub fn project_camera(&self, c: &Point3<f64>) -> Option<Projection> {
        if !(c.z > 0.0) {
            return None;
        }
        Some(Projection {
            u: self.fx * c.x / c.z + self.cx,
            v: self.fy * c.y / c.z + self.cy,
            depth: c.z,
        })
    }

    /// Nearest pixel to a continuous image coordinate, if inside the image.
    #[inline]
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let x = u.round();
        let y = v.round();
        if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Point3<f64>> {
        let c = self.unproject_camera(u, v, depth)?;
        Ok(self.camera_to_world(&c))
    }

    /// Like [`unproject`](Self::unproject) but returns camera-frame coordinates.
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Result<Point3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth(depth));
        }
        let in_bounds = u.is_finite()
            && v.is_finite()
            && u >= -0.5
            && v >= -0.5
            && u < self.width as f64 - 0.5
            && v < self.height as f64 - 0.5;
        if !in_bounds {
            return Err(Error::PixelOutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Point3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ))
    }

    /// Camera-frame ray direction through a pixel, scaled to unit z.
    #[inline]
    pub fn ray_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// World-space ray through a pixel center. The direction has unit
    /// camera-z component, so the ray parameter at a hit equals its depth.
    pub fn pixel_ray(&self, x: usize, y: usize) -> (Point3<f64>, Vector3<f64>) {
        let d = self.rotation() * self.ray_camera(x as f64, y as f64);
        (self.center(), d)
    }
}

/// Metric depth image; `0.0` is the only invalid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn is_valid_at(&self, i: usize) -> bool {
        self.data[i] > 0.0
    }

    pub fn valid_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&d| d > 0.0).collect(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height {
            return Err(Error::InvalidConfig(format!(
                "depth buffer has {} values for {}x{}",
                self.data.len(),
                self.width,
                self.height
            )));
        }
        if let Some(bad) = self.data.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidDepth(*bad));
        }
        Ok(())
    }
}

/// Where a single source pixel lands in a destination view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Splat {
    Landed {
        /// Destination pixel index (row-major).
        index: usize,
        /// Continuous destination coordinates.
        u: f64,
        v: f64,
        /// Depth of the transformed source point in the destination frame.
        raw_depth: f64,
        /// Depth along the destination pixel's own ray, obtained by
        /// intersecting it with the source pixel's local tangent plane.
        /// Equals `raw_depth` when no tangent plane is available.
        depth: f64,
    },
    Invalid,
    Behind,
    OutOfView,
}

/// Precomputed source-to-destination transform for forward splatting.
#[derive(Clone, Debug)]
pub struct Splatter<'a> {
    src: &'a CameraModel,
    dst: &'a CameraModel,
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
}

impl<'a> Splatter<'a> {
    pub fn new(src: &'a CameraModel, dst: &'a CameraModel) -> Self {
        let r_dst_t = dst.rotation().transpose();
        let rot = r_dst_t * src.rotation();
        let trans = r_dst_t * (src.center() - dst.center());
        Self { src, dst, rot, trans }
    }

    #[inline]
    fn src_point(&self, x: usize, y: usize, z: f64) -> Vector3<f64> {
        Vector3::new(
            (x as f64 - self.src.cx) * z / self.src.fx,
            (y as f64 - self.src.cy) * z / self.src.fy,
            z,
        )
    }

    /// Pick the neighbour along one axis that best continues the surface.
    fn tangent(&self, depth: &DepthMap, x: usize, y: usize, z: f64, horizontal: bool) -> Option<Vector3<f64>> {
        let (w, h) = depth.dims();
        let mut best: Option<(f64, Vector3<f64>, f64)> = None;
        for step in [-1i64, 1] {
            let (nx, ny) = if horizontal {
                (x as i64 + step, y as i64)
            } else {
                (x as i64, y as i64 + step)
            };
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let nz = depth.get(nx as usize, ny as usize);
            if nz <= 0.0 {
                continue;
            }
            let dz = (nz - z).abs();
            if dz > CONTINUITY_REL * z {
                continue;
            }
            if best.map_or(true, |(bd, _, _)| dz < bd) {
                let p = self.src_point(nx as usize, ny as usize, nz);
                best = Some((dz, p, step as f64));
            }
        }
        let (_, p, sign) = best?;
        Some((p - self.src_point(x, y, z)) * sign)
    }

    /// Transform and project the source pixel `(x, y)` without the tangent
    /// correction.
    #[inline]
    pub fn land(&self, depth: &DepthMap, x: usize, y: usize) -> Result<Landing, Splat> {
        let z = depth.get(x, y);
        if !(z > 0.0) {
            return Err(Splat::Invalid);
        }
        let p = Point3::from(self.rot * self.src_point(x, y, z) + self.trans);
        if !(p.z > 0.0) {
            return Err(Splat::Behind);
        }
        let u = self.dst.fx * p.x / p.z + self.dst.cx;
        let v = self.dst.fy * p.y / p.z + self.dst.cy;
        let Some((qx, qy)) = self.dst.pixel_of(u, v) else {
            return Err(Splat::OutOfView);
        };
        Ok(Landing {
            index: qy * self.dst.width + qx,
            qx,
            qy,
            u,
            v,
            point: p,
        })
    }

    /// Depth along the landing pixel's ray through the source pixel's local
    /// tangent plane, or the raw depth when no plane is available.
    pub fn corrected_depth(&self, depth: &DepthMap, x: usize, y: usize, l: &Landing) -> f64 {
        let z = depth.get(x, y);
        let p = l.point;
        if let (Some(tu), Some(tv)) = (
            self.tangent(depth, x, y, z, true),
            self.tangent(depth, x, y, z, false),
        ) {
            let n = self.rot * tu.cross(&tv);
            let ray = self.dst.ray_camera(l.qx as f64, l.qy as f64);
            let denom = n.dot(&ray);
            let norm = n.norm() * ray.norm();
            if norm > 0.0 && denom.abs() > 1e-6 * norm {
                let t = n.dot(&p.coords) / denom;
                if t > 0.0 && (t - p.z).abs() <= MAX_CORRECTION_REL * p.z {
                    return t;
                }
            }
        }
        p.z
    }

    /// Forward-splat the source pixel `(x, y)` of `depth` into the
    /// destination view.
    pub fn splat(&self, depth: &DepthMap, x: usize, y: usize) -> Splat {
        match self.land(depth, x, y) {
            Ok(l) => Splat::Landed {
                index: l.index,
                u: l.u,
                v: l.v,
                raw_depth: l.point.z,
                depth: self.corrected_depth(depth, x, y, &l),
            },
            Err(s) => s,
        }
    }
}

/// A source pixel projected into the destination image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landing {
    pub index: usize,
    pub qx: usize,
    pub qy: usize,
    pub u: f64,
    pub v: f64,
    /// Destination camera-frame point.
    pub point: Point3<f64>,
}

/// Marks an output pixel that received no source sample.
pub const NO_SOURCE: u32 = u32::MAX;

/// Result of forward-warping one depth map into another view.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub depth: DepthMap,
    /// Row-major index of the source pixel that won the z-buffer, or
    /// [`NO_SOURCE`].
    pub source_pixel: Vec<u32>,
    /// Depth value of the winning source pixel in the source view.
    pub source_depth: Vec<f64>,
    pub behind_camera: usize,
    pub out_of_view: usize,
}

/// Forward nearest-pixel splat of `src_depth` (seen from `src_cam`) into
/// `dst_cam` with z-buffering; when `only` is given, source pixels outside
/// it are ignored.
pub fn warp_depth_masked(
    src_depth: &DepthMap,
    src_cam: &CameraModel,
    dst_cam: &CameraModel,
    only: Option<&Mask>,
) -> Result<WarpResult> {
    if src_depth.dims() != src_cam.dims() {
        return Err(Error::dims("source depth", src_cam.dims(), src_depth.dims()));
    }
    if let Some(m) = only {
        if m.dims() != src_depth.dims() {
            return Err(Error::dims("warp mask", src_depth.dims(), m.dims()));
        }
    }
    let n = dst_cam.width * dst_cam.height;
    let mut out = WarpResult {
        depth: DepthMap::new(dst_cam.width, dst_cam.height),
        source_pixel: vec![NO_SOURCE; n],
        source_depth: vec![0.0; n],
        behind_camera: 0,
        out_of_view: 0,
    };
    let splatter = Splatter::new(src_cam, dst_cam);
    for y in 0..src_depth.height {
        for x in 0..src_depth.width {
            let si = y * src_depth.width + x;
            if only.is_some_and(|m| !m.data[si]) {
                continue;
            }
            match splatter.splat(src_depth, x, y) {
                Splat::Landed { index, depth, .. } => {
                    let cur = out.depth.data[index];
                    if cur == 0.0 || depth < cur {
                        out.depth.data[index] = depth;
                        out.source_pixel[index] = si as u32;
                        out.source_depth[index] = src_depth.data[si];
                    }
                }
                Splat::Behind => out.behind_camera += 1,
                Splat::OutOfView => out.out_of_view += 1,
                Splat::Invalid => {}
            }
        }
    }
    Ok(out)
}

pub fn warp_depth(src_depth: &DepthMap, src_cam: &CameraModel, dst_cam: &CameraModel) -> Result<WarpResult> {
    warp_depth_masked(src_depth, src_cam, dst_cam, None)
}

#[derive(Clone, Debug)]
pub struct PairWarp {
    pub src: usize,
    pub dst: usize,
    pub result: WarpResult,
}

/// Warp every view into every other view. Pairs are ordered `(s, t)`
/// lexicographically and computed in parallel; each pair owns its z-buffer.
pub fn warp_all_pairs(views: &[(&DepthMap, &CameraModel)]) -> Result<Vec<PairWarp>> {
    let n = views.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(s, t)| {
            let (depth, cam) = views[s];
            warp_depth(depth, cam, views[t].1)
                .map(|result| PairWarp { src: s, dst: t, result })
                .map_err(|e| Error::WarpPair {
                    src: s,
                    dst: t,
                    source: Box::new(e),
                })
        })
        .collect()
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_camera() -> impl Strategy<Value = CameraModel> {
        (
            50.0..400.0f64,
            50.0..400.0f64,
            (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
            (-1.0..1.0f64, -1.0..1.0f64, 1.0..3.0f64),
        )
            .prop_map(|(fx, fy, (ex, ey, ez), (tx, ty, tz))| {
                CameraModel::look_at(
                    fx,
                    fy,
                    31.5,
                    23.5,
                    64,
                    48,
                    Point3::new(ex, ey, ez),
                    Point3::new(ex + tx, ey + ty, ez + tz),
                    Vector3::new(0.3, -1.0, 0.1),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn project_inverts_unproject(cam in arb_camera(), x in 0usize..64, y in 0usize..48, d in 0.05..50.0f64) {
            let p = cam.unproject(x as f64, y as f64, d).unwrap();
            let q = cam.project(&p).unwrap();
            prop_assert!((q.u - x as f64).abs() <= 1e-6);
            prop_assert!((q.v - y as f64).abs() <= 1e-6);
            prop_assert!((q.depth - d).abs() <= 1e-9);
        }
    }
}
