//! Projection of labeled clutter geometry into 2D removal masks.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap};
use crate::image::{check_dims, Mask, RgbImage, HOLE_COLOR};
use crate::raycast::{closer, intersect_triangle, NO_HIT};
use crate::scene::{Frame, LabeledMesh};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub dilation_iters: usize,
    /// Max |mesh depth - captured depth| for a clutter surface to count as visible.
    pub depth_agreement_tol: f64,
    /// Raw masks with fewer pixels than this are dropped before dilation.
    pub min_mask_pixels: usize,
    /// Minimum fraction of clutter vertices that must agree with some view.
    pub misalignment_fraction: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            dilation_iters: 6,
            depth_agreement_tol: 0.05,
            min_mask_pixels: 1,
            misalignment_fraction: 0.001,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_agreement_tol > 0.0) {
            return Err(Error::InvalidConfig("depth_agreement_tol must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.misalignment_fraction) {
            return Err(Error::InvalidConfig("misalignment_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// True when all three camera-frame points lie outside one plane of the
/// view frustum, padded by 1.5 pixels.
fn outside_frustum(cam: &CameraModel, pts: &[Point3<f64>; 3]) -> bool {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let planes: [&dyn Fn(&Point3<f64>) -> f64; 5] = [
        &|p| p.z,
        &|p| cam.fx * p.x + (cam.cx + 1.5) * p.z,
        &|p| -cam.fx * p.x + (w + 0.5 - cam.cx) * p.z,
        &|p| cam.fy * p.y + (cam.cy + 1.5) * p.z,
        &|p| -cam.fy * p.y + (h + 0.5 - cam.cy) * p.z,
    ];
    planes.iter().any(|f| pts.iter().all(|p| f(p) <= 0.0))
}

/// Nearest triangle per pixel, found in object order: every triangle is
/// projected, and each pixel of its (slightly padded) bounding box is tested
/// with the exact ray-triangle predicate used by the renderer.
pub fn rasterize_nearest(mesh: &LabeledMesh, cam: &CameraModel) -> (Vec<f64>, Vec<u32>) {
    let (w, h) = cam.dims();
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut tri_buf = vec![NO_HIT; w * h];
    let rays: Vec<_> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| cam.pixel_ray(x, y)).collect();
    let v = &mesh.vertices;
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let corners = [v[t[0] as usize], v[t[1] as usize], v[t[2] as usize]];
        let cam_pts = corners.map(|p| cam.world_to_camera(&p));
        if outside_frustum(cam, &cam_pts) {
            continue;
        }
        let (x0, x1, y0, y1) = if cam_pts.iter().any(|p| p.z <= 0.0) {
            (0, w as i64 - 1, 0, h as i64 - 1)
        } else {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for p in &cam_pts {
                let u = cam.fx * p.x / p.z + cam.cx;
                let vv = cam.fy * p.y / p.z + cam.cy;
                lo = [lo[0].min(u), lo[1].min(vv)];
                hi = [hi[0].max(u), hi[1].max(vv)];
            }
            (
                (lo[0].floor() as i64 - 1).max(0),
                (hi[0].ceil() as i64 + 1).min(w as i64 - 1),
                (lo[1].floor() as i64 - 1).max(0),
                (hi[1].ceil() as i64 + 1).min(h as i64 - 1),
            )
        };
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let i = y * w + x;
                let (o, d) = &rays[i];
                if let Some(tt) = intersect_triangle(o, d, &corners[0], &corners[1], &corners[2]) {
                    if closer(tt, ti as u32, zbuf[i], tri_buf[i]) {
                        zbuf[i] = tt;
                        tri_buf[i] = ti as u32;
                    }
                }
            }
        }
    }
    (zbuf, tri_buf)
}

/// Pixels whose nearest surface is clutter and agrees with the captured depth
/// (or where the capture is empty).
pub fn project_mask_raw(mesh: &LabeledMesh, cam: &CameraModel, depth_cap: &DepthMap, cfg: &ProjectionConfig) -> Result<Mask> {
    check_dims("captured depth", cam.dims(), depth_cap.dims())?;
    let (w, h) = cam.dims();
    if !mesh.clutter.iter().any(|&c| c) {
        return Ok(Mask::new(w, h));
    }
    let (z, tri) = rasterize_nearest(mesh, cam);
    let mut m = Mask::new(w, h);
    for i in 0..w * h {
        if tri[i] == NO_HIT || !mesh.triangle_is_clutter(tri[i] as usize) {
            continue;
        }
        let d = depth_cap.data[i];
        m.data[i] = d == 0.0 || (z[i] - d).abs() <= cfg.depth_agreement_tol;
    }
    if m.count() < cfg.min_mask_pixels {
        return Ok(Mask::new(w, h));
    }
    Ok(m)
}

/// One 3×3-cross dilation step.
pub fn dilate_once(m: &Mask) -> Mask {
    let (w, h) = m.dims();
    Mask::from_fn(w, h, |x, y| {
        m.get(x, y)
            || (x > 0 && m.get(x - 1, y))
            || (x + 1 < w && m.get(x + 1, y))
            || (y > 0 && m.get(x, y - 1))
            || (y + 1 < h && m.get(x, y + 1))
    })
}

pub fn dilate(m: &Mask, iters: usize) -> Mask {
    let mut out = m.clone();
    for _ in 0..iters {
        out = dilate_once(&out);
    }
    out
}

/// Counts clutter vertices that match the captured depth in at least one view.
pub fn consistent_clutter_vertices(mesh: &LabeledMesh, frames: &[Frame], tol: f64) -> (usize, usize) {
    let clutter: Vec<usize> = (0..mesh.vertices.len()).filter(|&i| mesh.clutter[i]).collect();
    let consistent = clutter
        .par_iter()
        .filter(|&&i| {
            frames.iter().any(|f| {
                let Some(p) = f.camera.project(&mesh.vertices[i]) else {
                    return false;
                };
                let Some((x, y)) = f.camera.pixel_of(p.u, p.v) else {
                    return false;
                };
                let d = f.depth_cap.get(x, y);
                d > 0.0 && (p.depth - d).abs() <= tol
            })
        })
        .count();
    (consistent, clutter.len())
}

/// Per-frame dilated clutter masks, each unioned with the frame's existing mask.
pub fn project_masks(mesh: &LabeledMesh, frames: &[Frame], cfg: &ProjectionConfig) -> Result<Vec<Mask>> {
    cfg.validate()?;
    let (consistent, total) = consistent_clutter_vertices(mesh, frames, cfg.depth_agreement_tol);
    if total > 0 && (consistent as f64) < cfg.misalignment_fraction * total as f64 {
        return Err(Error::SuspectedMisalignment { consistent, total });
    }
    frames
        .par_iter()
        .map(|f| {
            let raw = project_mask_raw(mesh, &f.camera, &f.depth_cap, cfg)?;
            dilate(&raw, cfg.dilation_iters).union(&f.mask)
        })
        .collect()
}

/// Replaces every frame's mask with the projected one.
pub fn apply_projected_masks(mesh: &LabeledMesh, frames: &mut [Frame], cfg: &ProjectionConfig) -> Result<()> {
    let masks = project_masks(mesh, frames, cfg)?;
    for (f, m) in frames.iter_mut().zip(masks) {
        f.mask = m;
    }
    Ok(())
}

/// Color and depth with masked pixels blanked: color gets [`HOLE_COLOR`],
/// depth gets 0.
pub fn mask_frame(color: &RgbImage, depth: &DepthMap, mask: &Mask) -> Result<(RgbImage, DepthMap)> {
    check_dims("mask", color.dims(), mask.dims())?;
    check_dims("depth", color.dims(), depth.dims())?;
    let mut c = color.clone();
    let mut d = depth.clone();
    for (i, &m) in mask.data.iter().enumerate() {
        if m {
            c.data[i] = HOLE_COLOR;
            d.data[i] = 0.0;
        }
    }
    Ok((c, d))
}
