//! Boundary diffusion fill: onion-peel initialization from the hole boundary
//! followed by Jacobi averaging until the largest update drops below a
//! tolerance.

use crate::error::Result;
use crate::geometry::DepthMap;
use crate::image::{Mask, RgbImage};

use super::{BackendParams, ColorInpainter, InpaintRequest};

const NEIGHBORS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as i64, (i / w) as i64);
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then(|| ny as usize * w + nx as usize)
    })
}

/// Fills `domain` pixels from `known` ones. Returns which domain pixels
/// could be reached.
pub(crate) fn diffuse<const C: usize>(
    values: &mut [[f64; C]],
    known: &[bool],
    domain: &[bool],
    w: usize,
    h: usize,
    max_iters: usize,
    tol: f64,
) -> Vec<bool> {
    let n = w * h;
    let mut filled: Vec<bool> = (0..n).map(|i| known[i] && !domain[i]).collect();
    let mut frontier: Vec<usize> = (0..n)
        .filter(|&i| domain[i] && neighbors(i, w, h).any(|j| filled[j]))
        .collect();
    let mut queued = vec![false; n];
    for &i in &frontier {
        queued[i] = true;
    }
    while !frontier.is_empty() {
        let layer: Vec<[f64; C]> = frontier
            .iter()
            .map(|&i| {
                let mut acc = [0.0; C];
                let mut cnt = 0.0;
                for j in neighbors(i, w, h).filter(|&j| filled[j]) {
                    for c in 0..C {
                        acc[c] += values[j][c];
                    }
                    cnt += 1.0;
                }
                acc.map(|a| a / cnt)
            })
            .collect();
        for (&i, v) in frontier.iter().zip(layer) {
            values[i] = v;
            filled[i] = true;
        }
        let mut next = Vec::new();
        for &i in &frontier {
            for j in neighbors(i, w, h) {
                if domain[j] && !filled[j] && !queued[j] {
                    queued[j] = true;
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }
    let active: Vec<usize> = (0..n).filter(|&i| domain[i] && filled[i]).collect();
    let mut scratch = vec![[0.0; C]; active.len()];
    for _ in 0..max_iters {
        let mut max_delta = 0.0f64;
        for (k, &i) in active.iter().enumerate() {
            let mut acc = [0.0; C];
            let mut cnt = 0.0;
            for j in neighbors(i, w, h).filter(|&j| filled[j]) {
                for c in 0..C {
                    acc[c] += values[j][c];
                }
                cnt += 1.0;
            }
            let v = acc.map(|a| a / cnt);
            for c in 0..C {
                max_delta = max_delta.max((v[c] - values[i][c]).abs());
            }
            scratch[k] = v;
        }
        for (k, &i) in active.iter().enumerate() {
            values[i] = scratch[k];
        }
        if max_delta < tol {
            break;
        }
    }
    (0..n).map(|i| domain[i] && filled[i]).collect()
}

/// Diffusion fill of a color image; holes with no boundary at all become
/// mid gray.
pub fn diffuse_color(color: &RgbImage, holes: &Mask, max_iters: usize, tol: f64) -> RgbImage {
    let (w, h) = color.dims();
    let mut vals: Vec<[f64; 3]> = color.data.iter().map(|p| p.map(|c| c as f64 / 255.0)).collect();
    let known: Vec<bool> = holes.data.iter().map(|&m| !m).collect();
    let reached = diffuse(&mut vals, &known, &holes.data, w, h, max_iters, tol);
    let mut out = color.clone();
    for i in 0..w * h {
        if holes.data[i] {
            out.data[i] = if reached[i] {
                vals[i].map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            } else {
                [128, 128, 128]
            };
        }
    }
    out
}

/// Diffusion fill of depth from valid non-hole pixels. Unreachable hole
/// pixels stay 0; the returned mask marks the filled ones.
pub fn diffuse_depth(depth: &DepthMap, holes: &Mask, max_iters: usize, tol: f64) -> (DepthMap, Mask) {
    let (w, h) = depth.dims();
    let mut vals: Vec<[f64; 1]> = depth.data.iter().map(|&d| [d]).collect();
    let known: Vec<bool> = (0..w * h).map(|i| !holes.data[i] && depth.data[i] > 0.0).collect();
    let reached = diffuse(&mut vals, &known, &holes.data, w, h, max_iters, tol);
    let mut out = depth.clone();
    for i in 0..w * h {
        if holes.data[i] {
            out.data[i] = if reached[i] { vals[i][0] } else { 0.0 };
        }
    }
    (
        out,
        Mask {
            width: w,
            height: h,
            data: reached,
        },
    )
}

#[derive(Clone, Debug)]
pub struct DiffusionColor {
    max_iters: usize,
    tol: f64,
}

impl DiffusionColor {
    pub fn new(p: &BackendParams) -> Self {
        Self {
            max_iters: p.diffusion_max_iters,
            tol: p.diffusion_tol,
        }
    }
}

impl ColorInpainter for DiffusionColor {
    fn name(&self) -> &str {
        "diffusion_color"
    }

    fn inpaint_color(&self, req: &InpaintRequest<'_>) -> Result<RgbImage> {
        Ok(diffuse_color(req.color, req.hole_mask, self.max_iters, self.tol))
    }
}
