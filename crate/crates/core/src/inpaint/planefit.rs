//! Color-guided piecewise-planar depth completion.
//!
//! For each hole region the valid depth in a band around it is split into
//! segments by quantized guidance color. Each segment gets a RANSAC plane
//! (refined by least squares) in camera coordinates, and every hole pixel is
//! filled by intersecting its ray with the plane of the segment whose mean
//! color is closest to the pixel's guidance color. Pixels without a usable
//! plane are filled by boundary diffusion.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::regions::{label_regions, Connectivity};

use super::diffusion::diffuse;
use super::{BackendParams, DepthCompleter, InpaintRequest};

/// Plane `normal · x = offset` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    fn through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<Self> {
        let n = (b - a).cross(&(c - a)).try_normalize(1e-12)?;
        Some(Self {
            normal: n,
            offset: n.dot(&a.coords),
        })
    }

    fn least_squares(points: &[Point3<f64>]) -> Option<Self> {
        if points.len() < 3 {
            return None;
        }
        let n = points.len() as f64;
        let c = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p.coords - c;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let k = eig.eigenvalues.imin();
        let normal = eig.eigenvectors.column(k).into_owned().try_normalize(1e-12)?;
        Some(Self {
            normal,
            offset: normal.dot(&c),
        })
    }
}

/// RANSAC plane fit followed by a least-squares refit on the inliers.
/// Returns the plane and its inlier count.
pub fn fit_plane(points: &[Point3<f64>], threshold: f64, iterations: usize, rng: &mut ChaCha8Rng) -> Option<(Plane, usize)> {
    if points.len() < 3 {
        return None;
    }
    let count = |pl: &Plane| points.iter().filter(|p| pl.distance(p).abs() < threshold).count();
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..iterations {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let k = rng.gen_range(0..points.len());
        if i == j || j == k || i == k {
            continue;
        }
        let Some(pl) = Plane::through(&points[i], &points[j], &points[k]) else {
            continue;
        };
        let c = count(&pl);
        if best.map_or(true, |(_, b)| c > b) {
            best = Some((pl, c));
        }
    }
    let (pl, _) = best?;
    let inliers: Vec<Point3<f64>> = points.iter().filter(|p| pl.distance(p).abs() < threshold).copied().collect();
    let refined = Plane::least_squares(&inliers)?;
    let c = count(&refined);
    Some((refined, c))
}

/// Segments with fewer band pixels are ignored.
const MIN_SEGMENT_PIXELS: usize = 20;
/// A plane is used only if this fraction of its segment lies within the threshold.
const MIN_INLIER_FRACTION: f64 = 0.5;

fn quantize(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| v >> 5)
}

/// Pixels within Chebyshev distance `r` of `marks`, by separable box dilation.
fn square_dilate(marks: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let mut prefix = vec![0usize; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + marks[y * w + x] as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            rows[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let mut prefix = vec![0usize; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct PlanefitDepth {
    threshold: f64,
    iterations: usize,
    band: usize,
    diffusion_iters: usize,
    seed: u64,
}

impl PlanefitDepth {
    pub fn new(p: &BackendParams) -> Self {
        Self {
            threshold: p.ransac_threshold,
            iterations: p.ransac_iterations,
            band: p.band_px,
            diffusion_iters: p.diffusion_max_iters,
            seed: p.seed,
        }
    }
}

impl DepthCompleter for PlanefitDepth {
    fn name(&self) -> &str {
        "planefit_depth"
    }

    fn complete_depth(&self, req: &InpaintRequest<'_>) -> Result<DepthMap> {
        let (w, h) = req.depth.dims();
        let cam = req.camera;
        let guide = req.guidance.unwrap_or(req.color);
        let holes = &req.hole_mask.data;
        let mut out = req.depth.clone();
        for (i, &m) in holes.iter().enumerate() {
            if m {
                out.data[i] = 0.0;
            }
        }
        let known: Vec<bool> = (0..w * h).map(|i| !holes[i] && req.depth.data[i] > 0.0).collect();
        let regions = label_regions(req.hole_mask, Connectivity::Four);
        let mut fallback = vec![false; w * h];
        let mut unfillable = 0usize;
        for (ri, region) in regions.regions.iter().enumerate() {
            let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
            for &i in region {
                x0 = x0.min(i % w);
                x1 = x1.max(i % w);
                y0 = y0.min(i / w);
                y1 = y1.max(i / w);
            }
            let bx0 = x0.saturating_sub(self.band);
            let by0 = y0.saturating_sub(self.band);
            let bx1 = (x1 + self.band).min(w - 1);
            let by1 = (y1 + self.band).min(h - 1);
            let (bw, bh) = (bx1 - bx0 + 1, by1 - by0 + 1);
            let mut marks = vec![false; bw * bh];
            for &i in region {
                marks[(i / w - by0) * bw + (i % w - bx0)] = true;
            }
            let near = square_dilate(&marks, bw, bh, self.band);
            let mut segments: BTreeMap<[u8; 3], Vec<usize>> = BTreeMap::new();
            for by in 0..bh {
                for bx in 0..bw {
                    let i = (by + by0) * w + bx + bx0;
                    if near[by * bw + bx] && known[i] {
                        segments.entry(quantize(guide.data[i])).or_default().push(i);
                    }
                }
            }
            if segments.is_empty() {
                unfillable += region.len();
                continue;
            }
            let band_depths = segments.values().flatten().map(|&i| req.depth.data[i]);
            let (dmin, dmax) = band_depths.fold((f64::INFINITY, 0.0f64), |(a, b), d| (a.min(d), b.max(d)));
            let mut planes: Vec<([f64; 3], Plane)> = Vec::new();
            for (key, pix) in &segments {
                if pix.len() < MIN_SEGMENT_PIXELS {
                    continue;
                }
                let pts: Vec<Point3<f64>> = pix
                    .iter()
                    .map(|&i| cam.unproject_camera((i % w) as f64, (i / w) as f64, req.depth.data[i]))
                    .collect::<Result<_>>()?;
                let seed = self.seed
                    ^ (req.frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    ^ ((ri as u64) << 32)
                    ^ u64::from_le_bytes([key[0], key[1], key[2], 0, 0, 0, 0, 0]).wrapping_mul(0xD1B5_4A32_D192_ED03);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                if let Some((pl, inl)) = fit_plane(&pts, self.threshold, self.iterations, &mut rng) {
                    if inl as f64 >= MIN_INLIER_FRACTION * pts.len() as f64 {
                        let mut mean = [0.0; 3];
                        for &i in pix {
                            for c in 0..3 {
                                mean[c] += guide.data[i][c] as f64;
                            }
                        }
                        planes.push((mean.map(|m| m / pix.len() as f64), pl));
                    }
                }
            }
            for &i in region {
                let g = guide.data[i].map(|c| c as f64);
                let best = planes.iter().min_by(|a, b| {
                    let da: f64 = (0..3).map(|c| (a.0[c] - g[c]).powi(2)).sum();
                    let db: f64 = (0..3).map(|c| (b.0[c] - g[c]).powi(2)).sum();
                    da.total_cmp(&db)
                });
                let depth = best.and_then(|(_, pl)| {
                    let r = cam.ray_camera((i % w) as f64, (i / w) as f64);
                    let denom = pl.normal.dot(&r);
                    if denom.abs() < 1e-6 {
                        return None;
                    }
                    let z = pl.offset / denom;
                    (z.is_finite() && z >= 0.5 * dmin && z <= 2.0 * dmax).then_some(z)
                });
                match depth {
                    Some(z) => out.data[i] = z,
                    None => fallback[i] = true,
                }
            }
        }
        if fallback.iter().any(|&f| f) {
            let mut vals: Vec<[f64; 1]> = out.data.iter().map(|&d| [d]).collect();
            let known_now: Vec<bool> = (0..w * h).map(|i| !fallback[i] && out.data[i] > 0.0).collect();
            let reached = diffuse(&mut vals, &known_now, &fallback, w, h, self.diffusion_iters, 1e-4);
            for i in 0..w * h {
                if fallback[i] {
                    out.data[i] = if reached[i] { vals[i][0] } else { 0.0 };
                }
            }
        }
        if unfillable > 0 {
            return Err(Error::Unfillable {
                pixels: unfillable,
                partial: Box::new(out),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;
    use crate::image::{Mask, RgbImage};
    use crate::inpaint::run_depth;
    use nalgebra::Point3 as P3;

    fn floor_view() -> (CameraModel, DepthMap, RgbImage) {
        // Camera 1.5 m above a z = 0 floor, pitched down 40 degrees.
        let cam = CameraModel::look_at(
            80.0,
            80.0,
            39.5,
            29.5,
            80,
            60,
            P3::new(0.0, -3.0, 1.5),
            P3::new(0.0, 0.0, 0.0),
            Vector3::z(),
        )
        .unwrap();
        let depth = DepthMap::from_fn(80, 60, |x, y| {
            let (o, d) = cam.pixel_ray(x, y);
            let t = -o.z / d.z;
            if t > 0.0 {
                t
            } else {
                0.0
            }
        });
        (cam, depth, RgbImage::filled(80, 60, [150, 120, 90]))
    }

    #[test]
    fn floor_hole_recovers_plane() {
        let (cam, truth, color) = floor_view();
        assert!(truth.data.iter().all(|&d| d > 0.0));
        let holes = Mask::from_fn(80, 60, |x, y| (30..50).contains(&x) && (20..40).contains(&y));
        let mut depth = truth.clone();
        for (i, &m) in holes.data.iter().enumerate() {
            if m {
                depth.data[i] = 0.0;
            }
        }
        let b = PlanefitDepth::new(&BackendParams::default());
        let req = InpaintRequest {
            frame_index: 0,
            iteration: 0,
            camera: &cam,
            color: &color,
            depth: &depth,
            hole_mask: &holes,
            guidance: Some(&color),
        };
        let out = run_depth(&b, &req).unwrap();
        for i in 0..truth.data.len() {
            assert!((out.data[i] - truth.data[i]).abs() < 1e-3, "pixel {i}");
        }
        assert_eq!(run_depth(&b, &req).unwrap(), out, "deterministic");
    }

    #[test]
    fn no_band_support_is_unfillable() {
        let (cam, _, color) = floor_view();
        let depth = DepthMap::new(80, 60);
        let holes = Mask::from_fn(80, 60, |x, y| (30..50).contains(&x) && (20..40).contains(&y));
        let b = PlanefitDepth::new(&BackendParams::default());
        let req = InpaintRequest {
            frame_index: 0,
            iteration: 0,
            camera: &cam,
            color: &color,
            depth: &depth,
            hole_mask: &holes,
            guidance: None,
        };
        match b.complete_depth(&req) {
            Err(Error::Unfillable { pixels, partial }) => {
                assert_eq!(pixels, 400);
                assert!(partial.data.iter().all(|&d| d == 0.0));
            }
            other => panic!("expected unfillable, got {other:?}"),
        }
    }

    #[test]
    fn ransac_ignores_outliers() {
        let mut pts: Vec<P3<f64>> = (0..200)
            .map(|k| P3::new((k % 20) as f64 * 0.1, (k / 20) as f64 * 0.1, 2.0))
            .collect();
        for k in 0..40 {
            pts.push(P3::new(k as f64 * 0.05, 0.3, 2.5 + (k % 3) as f64 * 0.2));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pl, inl) = fit_plane(&pts, 0.01, 200, &mut rng).unwrap();
        assert_eq!(inl, 200);
        assert!((pl.normal.z.abs() - 1.0).abs() < 1e-9);
        assert!((pl.offset.abs() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn square_dilation_matches_chebyshev() {
        let mut m = vec![false; 15 * 11];
        m[5 * 15 + 7] = true;
        let d = square_dilate(&m, 15, 11, 3);
        for y in 0..11i64 {
            for x in 0..15i64 {
                assert_eq!(d[(y * 15 + x) as usize], (x - 7).abs().max((y - 5).abs()) <= 3);
            }
        }
    }
}
