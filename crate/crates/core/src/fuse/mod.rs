//! Fusion of completed RGB-D frames into an oriented point cloud or a
//! TSDF surface.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap};
use crate::image::{check_dims, RgbImage};
use crate::refine::RefineConfig;

mod mc_tables;
mod tsdf;

pub use tsdf::{marching_cubes, tsdf_fuse, SurfaceMesh, TsdfVolume};

/// Neighbours deeper or shallower than this fraction of the center depth
/// are treated as a different surface when estimating normals.
const NORMAL_CONTINUITY: f64 = 0.05;

/// One posed RGB-D frame to fuse.
#[derive(Clone, Copy, Debug)]
pub struct FuseView<'a> {
    pub camera: &'a CameraModel,
    pub color: &'a RgbImage,
    pub depth: &'a DepthMap,
}

impl FuseView<'_> {
    fn validate(&self) -> Result<()> {
        check_dims("fuse color", self.camera.dims(), self.color.dims())?;
        check_dims("fuse depth", self.camera.dims(), self.depth.dims())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusedCloud {
    pub points: Vec<Point3<f64>>,
    /// Unit normals facing the camera that observed the point.
    pub normals: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    /// (frame index, row-major pixel index) of each point.
    pub source: Vec<(usize, usize)>,
}

impl FusedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn camera_point(cam: &CameraModel, x: usize, y: usize, z: f64) -> Vector3<f64> {
    Vector3::new((x as f64 - cam.cx) * z / cam.fx, (y as f64 - cam.cy) * z / cam.fy, z)
}

/// Difference vector across `(x, y)` along one image axis, using whichever
/// of the two neighbours lie on the same surface.
fn axis_tangent(cam: &CameraModel, depth: &DepthMap, x: usize, y: usize, horizontal: bool) -> Option<Vector3<f64>> {
    let (w, h) = depth.dims();
    let z = depth.get(x, y);
    let sample = |step: i64| -> Option<Vector3<f64>> {
        let (nx, ny) = if horizontal {
            (x as i64 + step, y as i64)
        } else {
            (x as i64, y as i64 + step)
        };
        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
            return None;
        }
        let nz = depth.get(nx as usize, ny as usize);
        (nz > 0.0 && (nz - z).abs() <= NORMAL_CONTINUITY * z).then(|| camera_point(cam, nx as usize, ny as usize, nz))
    };
    let center = camera_point(cam, x, y, z);
    match (sample(-1), sample(1)) {
        (Some(a), Some(b)) => Some(b - a),
        (Some(a), None) => Some(center - a),
        (None, Some(b)) => Some(b - center),
        (None, None) => None,
    }
}

/// Camera-frame unit normal at a valid pixel, oriented toward the camera.
/// Falls back to the reversed viewing ray when a tangent is missing.
pub fn pixel_normal(cam: &CameraModel, depth: &DepthMap, x: usize, y: usize) -> Vector3<f64> {
    let p = camera_point(cam, x, y, depth.get(x, y));
    let toward = -p.normalize();
    let n = match (axis_tangent(cam, depth, x, y, true), axis_tangent(cam, depth, x, y, false)) {
        (Some(th), Some(tv)) => th.cross(&tv).try_normalize(1e-300),
        _ => None,
    };
    match n {
        Some(n) if n.dot(&toward) < 0.0 => -n,
        Some(n) => n,
        None => toward,
    }
}

/// Unprojects every pixel with depth in (0, `fuse_max_depth`] and attaches
/// normals and colors, subsampling uniformly with the configured seed when
/// the total exceeds `fuse_max_points`.
pub fn fuse(views: &[FuseView<'_>], rcfg: &RefineConfig) -> Result<FusedCloud> {
    rcfg.validate()?;
    for v in views {
        v.validate()?;
    }
    let per_view: Vec<FusedCloud> = views
        .par_iter()
        .enumerate()
        .map(|(f, v)| {
            let (w, h) = v.camera.dims();
            let rot = v.camera.rotation();
            let mut c = FusedCloud::default();
            for y in 0..h {
                for x in 0..w {
                    let z = v.depth.get(x, y);
                    if !(z > 0.0 && z <= rcfg.fuse_max_depth) {
                        continue;
                    }
                    let p = camera_point(v.camera, x, y, z);
                    c.points.push(v.camera.camera_to_world(&Point3::from(p)));
                    c.normals.push(rot * pixel_normal(v.camera, v.depth, x, y));
                    c.colors.push(v.color.get(x, y));
                    c.source.push((f, y * w + x));
                }
            }
            c
        })
        .collect();
    let mut cloud = FusedCloud::default();
    for c in per_view {
        cloud.points.extend(c.points);
        cloud.normals.extend(c.normals);
        cloud.colors.extend(c.colors);
        cloud.source.extend(c.source);
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if cloud.len() > rcfg.fuse_max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(rcfg.seed);
        let mut keep = rand::seq::index::sample(&mut rng, cloud.len(), rcfg.fuse_max_points).into_vec();
        keep.sort_unstable();
        cloud = FusedCloud {
            points: keep.iter().map(|&i| cloud.points[i]).collect(),
            normals: keep.iter().map(|&i| cloud.normals[i]).collect(),
            colors: keep.iter().map(|&i| cloud.colors[i]).collect(),
            source: keep.iter().map(|&i| cloud.source[i]).collect(),
        };
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    fn wall_view(pose: Matrix4<f64>) -> (CameraModel, RgbImage, DepthMap) {
        let cam = CameraModel::new(30.0, 30.0, 15.5, 11.5, 32, 24, pose).unwrap();
        (cam, RgbImage::filled(32, 24, [200, 10, 10]), DepthMap::filled(32, 24, 2.0))
    }

    #[test]
    fn flat_plane_normals() {
        // A tilted plane z = 2 + 0.1 x in camera coordinates.
        let cam = CameraModel::new(30.0, 30.0, 15.5, 11.5, 32, 24, Matrix4::identity()).unwrap();
        let depth = DepthMap::from_fn(32, 24, |x, _| {
            let rx = (x as f64 - cam.cx) / cam.fx;
            2.0 / (1.0 - 0.1 * rx)
        });
        let color = RgbImage::new(32, 24);
        let cloud = fuse(&[FuseView { camera: &cam, color: &color, depth: &depth }], &RefineConfig::default()).unwrap();
        let expect = Vector3::new(0.1, 0.0, -1.0).normalize();
        assert_eq!(cloud.len(), 32 * 24);
        for n in &cloud.normals {
            assert!((n - expect).norm() < 1e-3, "{n:?}");
            assert!((n.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_cap_and_provenance() {
        let (cam, color, mut depth) = wall_view(Matrix4::identity());
        depth.set(3, 4, 4.0);
        depth.set(5, 4, 0.0);
        let cloud = fuse(&[FuseView { camera: &cam, color: &color, depth: &depth }], &RefineConfig::default()).unwrap();
        assert_eq!(cloud.len(), 32 * 24 - 2);
        assert!(!cloud.source.contains(&(0, 4 * 32 + 3)));
        for (p, &(_, i)) in cloud.points.iter().zip(&cloud.source) {
            let back = cam.project(p).unwrap();
            assert!((back.u - (i % 32) as f64).abs() < 1e-9 && (back.v - (i / 32) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn subsampling_is_seeded() {
        let (cam, color, depth) = wall_view(Matrix4::identity());
        let v = [FuseView { camera: &cam, color: &color, depth: &depth }];
        let cfg = RefineConfig {
            fuse_max_points: 100,
            ..Default::default()
        };
        let a = fuse(&v, &cfg).unwrap();
        let b = fuse(&v, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.source.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_cloud_errors() {
        let (cam, color, _) = wall_view(Matrix4::identity());
        let depth = DepthMap::new(32, 24);
        let r = fuse(&[FuseView { camera: &cam, color: &color, depth: &depth }], &RefineConfig::default());
        assert!(matches!(r, Err(Error::EmptyCloud)));
    }
}
