//! Geometry, image and segmentation metrics.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{check_dims, Mask, RgbImage};

/// Describes the Chamfer variant, for report headers.
pub const CHAMFER_FORMULA: &str =
    "0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|), unsquared Euclidean, centimeters";

const LEAF: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact nearest-neighbour index over a static point set.
pub struct KdTree<'a> {
    points: &'a [Point3<f64>],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3<f64>]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF {
            return id;
        }
        let slice = &mut self.order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        if hi[axis] == lo[axis] {
            return id;
        }
        let mid = slice.len() / 2;
        let pts = self.points;
        slice.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[slice[mid]][axis];
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Squared distance to and index of the nearest point.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point3<f64>, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Distance from every point of `from` to its nearest neighbour in `to`.
pub fn nearest_distances(from: &[Point3<f64>], to: &[Point3<f64>]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(to);
    Ok(from
        .par_iter()
        .map(|p| tree.nearest(p).expect("non-empty tree").0.sqrt())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    pub a_to_b_cm: f64,
    pub b_to_a_cm: f64,
    pub chamfer_cm: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric Chamfer distance between two clouds given in meters.
pub fn chamfer(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<ChamferReport> {
    let ab = 100.0 * mean(&nearest_distances(a, b)?);
    let ba = 100.0 * mean(&nearest_distances(b, a)?);
    Ok(ChamferReport {
        a_to_b_cm: ab,
        b_to_a_cm: ba,
        chamfer_cm: 0.5 * (ab + ba),
    })
}

/// Writes infinities as the string `"inf"`, which plain JSON cannot carry.
fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub l1: f64,
    /// Root mean squared error.
    pub l2: f64,
    /// dB; infinite for identical inputs.
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
    pub ssim: f64,
    pub pixels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageReport {
    pub full: ImageMetrics,
    /// Same metrics restricted to a region (e.g. the removal mask).
    pub region: Option<ImageMetrics>,
}

const SSIM_RADIUS: i64 = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Per-pixel SSIM averaged over channels. Windows are 11×11 Gaussians,
/// truncated and renormalized at the image border.
pub fn ssim_map(a: &RgbImage, b: &RgbImage) -> Result<Vec<f64>> {
    check_dims("render", b.dims(), a.dims())?;
    let (w, h) = a.dims();
    let kernel: Vec<f64> = (-SSIM_RADIUS..=SSIM_RADIUS)
        .map(|d| (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut out = vec![0.0; w * h];
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[ch] as f64 / 255.0).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[ch] as f64 / 255.0).collect();
        // Separable weighted sums of x, y, x², y², xy plus the weight itself.
        let fields = |i: usize| [x[i], y[i], x[i] * x[i], y[i] * y[i], x[i] * y[i], 1.0];
        let mut horiz = vec![[0.0f64; 6]; w * h];
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = [0.0; 6];
                for (k, &g) in kernel.iter().enumerate() {
                    let sx = xx as i64 + k as i64 - SSIM_RADIUS;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let f = fields(yy * w + sx as usize);
                    for c in 0..6 {
                        acc[c] += g * f[c];
                    }
                }
                horiz[yy * w + xx] = acc;
            }
        }
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = [0.0; 6];
                for (k, &g) in kernel.iter().enumerate() {
                    let sy = yy as i64 + k as i64 - SSIM_RADIUS;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    let f = horiz[sy as usize * w + xx];
                    for c in 0..6 {
                        acc[c] += g * f[c];
                    }
                }
                let n = acc[5];
                let (mx, my) = (acc[0] / n, acc[1] / n);
                let vx = acc[2] / n - mx * mx;
                let vy = acc[3] / n - my * my;
                let cxy = acc[4] / n - mx * my;
                let s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                out[yy * w + xx] += s / 3.0;
            }
        }
    }
    Ok(out)
}

/// L1, RMSE and PSNR over paired values already scaled to [0, 1].
pub fn error_metrics(render: &[f64], truth: &[f64]) -> (f64, f64, f64) {
    let n = render.len() as f64;
    let l1 = render.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mse = render.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let psnr = if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() };
    (l1, mse.sqrt(), psnr)
}

fn metrics_over(a: &RgbImage, b: &RgbImage, ssim: &[f64], pick: impl Fn(usize) -> bool) -> Option<ImageMetrics> {
    let idx: Vec<usize> = (0..a.data.len()).filter(|&i| pick(i)).collect();
    if idx.is_empty() {
        return None;
    }
    let scaled = |img: &RgbImage| -> Vec<f64> {
        idx.iter().flat_map(|&i| img.data[i].map(|c| c as f64 / 255.0)).collect()
    };
    let (l1, l2, psnr) = error_metrics(&scaled(a), &scaled(b));
    Some(ImageMetrics {
        l1,
        l2,
        psnr,
        ssim: idx.iter().map(|&i| ssim[i]).sum::<f64>() / idx.len() as f64,
        pixels: idx.len(),
    })
}

/// L1, L2, PSNR and SSIM on [0, 1]-scaled values, optionally also inside
/// `region`.
pub fn image_metrics(render: &RgbImage, truth: &RgbImage, region: Option<&Mask>) -> Result<ImageReport> {
    check_dims("render", truth.dims(), render.dims())?;
    if render.data.is_empty() {
        return Err(Error::Metric("empty image".into()));
    }
    if let Some(m) = region {
        check_dims("metric region", truth.dims(), m.dims())?;
    }
    let ssim = ssim_map(render, truth)?;
    let full = metrics_over(render, truth, &ssim, |_| true).expect("non-empty image");
    let region = region.and_then(|m| metrics_over(render, truth, &ssim, |i| m.data[i]));
    Ok(ImageReport { full, region })
}

/// Binary segmentation scores. Index 0 is non-clutter, 1 is clutter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    /// `None` when the ground truth has no element of that class.
    pub iou: [Option<f64>; 2],
    /// Mean over the defined class IoUs.
    pub miou: Option<f64>,
    /// Clutter precision; `None` without positive predictions.
    pub precision: Option<f64>,
    /// Clutter recall; `None` without positive ground truth.
    pub recall: Option<f64>,
    pub confusion: Confusion,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Scores `pred` against `gt` over the same support (pixels or vertices),
/// with `true` meaning clutter.
pub fn mask_metrics(pred: &[bool], gt: &[bool]) -> Result<MaskMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::Metric(format!(
            "prediction has {} elements, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let clutter = if c.tp + c.fn_ > 0 { ratio(c.tp, c.tp + c.fp + c.fn_) } else { None };
    let background = if c.tn + c.fp > 0 { ratio(c.tn, c.tn + c.fp + c.fn_) } else { None };
    let iou = [background, clutter];
    let defined: Vec<f64> = iou.iter().flatten().copied().collect();
    Ok(MaskMetrics {
        iou,
        miou: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        confusion: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn brute_mean_nn(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
        a.iter()
            .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn chamfer_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 200);
        assert_eq!(chamfer(&a, &a).unwrap().chamfer_cm, 0.0);
        let grid: Vec<Point3<f64>> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0)))
            .collect();
        let shifted: Vec<Point3<f64>> = grid.iter().map(|p| p + nalgebra::Vector3::new(0.01, 0.0, 0.0)).collect();
        assert!((chamfer(&grid, &shifted).unwrap().chamfer_cm - 1.0).abs() < 1e-9);
        assert!(matches!(chamfer(&[], &a), Err(Error::EmptyCloud)));
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_cloud(&mut rng, 1000);
        let b = random_cloud(&mut rng, 1000);
        let r = chamfer(&a, &b).unwrap();
        let expect = 50.0 * (brute_mean_nn(&a, &b) + brute_mean_nn(&b, &a));
        assert!((r.chamfer_cm - expect).abs() < 1e-9);
    }

    #[test]
    fn degenerate_planar_clouds() {
        // Many points sharing coordinates on every axis.
        let a: Vec<Point3<f64>> = (0..5000).map(|i| Point3::new((i % 7) as f64, 0.0, 1.0)).collect();
        let b = vec![Point3::new(0.5, 0.0, 1.0); 300];
        let expect = 100.0 * brute_mean_nn(&a, &b);
        assert!((chamfer(&a, &b).unwrap().a_to_b_cm - expect).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn chamfer_symmetry_and_union(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, 60);
            let b = random_cloud(&mut rng, 40);
            let ab = chamfer(&a, &b).unwrap().chamfer_cm;
            prop_assert_eq!(ab, chamfer(&b, &a).unwrap().chamfer_cm);
            let union: Vec<_> = a.iter().chain(&b).copied().collect();
            prop_assert!(chamfer(&a, &union).unwrap().chamfer_cm <= ab);
        }

        #[test]
        fn pixel_permutation_invariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 64;
            let a = RgbImage { width: 8, height: 8, data: (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect() };
            let b = RgbImage { width: 8, height: 8, data: (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect() };
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let pa = RgbImage { width: 8, height: 8, data: perm.iter().map(|&i| a.data[i]).collect() };
            let pb = RgbImage { width: 8, height: 8, data: perm.iter().map(|&i| b.data[i]).collect() };
            let m = image_metrics(&a, &b, None).unwrap().full;
            let pm = image_metrics(&pa, &pb, None).unwrap().full;
            prop_assert!((m.l1 - pm.l1).abs() < 1e-12);
            prop_assert!((m.l2 - pm.l2).abs() < 1e-12);
            prop_assert!((m.psnr - pm.psnr).abs() < 1e-9);
            prop_assert_eq!(image_metrics(&a, &a, None).unwrap().full.ssim, 1.0);
        }
    }

    #[test]
    fn image_examples() {
        let img = RgbImage::from_fn(20, 16, |x, y| [(x * 12) as u8, (y * 15) as u8, 90]);
        let same = image_metrics(&img, &img, None).unwrap().full;
        assert_eq!((same.l1, same.ssim), (0.0, 1.0));
        assert!(same.psnr.is_infinite());
        assert_eq!(serde_json::to_value(same).unwrap()["psnr"], "inf");

        let (l1, l2, psnr) = error_metrics(&[0.5; 12], &[0.0; 12]);
        assert_eq!((l1, l2), (0.5, 0.5));
        assert!((psnr - 20.0 * 2f64.log10()).abs() < 1e-12 && (psnr - 6.0206).abs() < 1e-4);

        let mut inv = img.clone();
        for p in &mut inv.data {
            p[0] = 255 - p[0];
        }
        let worse = image_metrics(&inv, &img, None).unwrap().full;
        assert!(worse.l1 > 0.0 && worse.l2 > 0.0 && worse.psnr < same.psnr && worse.ssim < 1.0);

        let region = Mask::from_fn(20, 16, |x, _| x < 4);
        let r = image_metrics(&inv, &img, Some(&region)).unwrap();
        assert_eq!(r.region.unwrap().pixels, 64);
    }

    #[test]
    fn mask_examples() {
        let gt = Mask::from_fn(10, 10, |x, y| x < 4 && y < 4);
        let m = mask_metrics(&gt.data, &gt.data).unwrap();
        assert_eq!(m.iou, [Some(1.0), Some(1.0)]);
        let m = mask_metrics(&vec![false; 100], &gt.data).unwrap();
        assert_eq!((m.iou[1], m.recall, m.precision), (Some(0.0), Some(0.0), None));
        // Two 4×4 squares overlapping in 8 pixels: 8 / (16 + 16 - 8).
        let a = Mask::from_fn(10, 10, |x, y| x < 4 && y < 4);
        let b = Mask::from_fn(10, 10, |x, y| (2..6).contains(&x) && y < 4);
        let m = mask_metrics(&a.data, &b.data).unwrap();
        assert!((m.iou[1].unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let none = mask_metrics(&vec![true; 4], &vec![true; 4]).unwrap();
        assert_eq!(none.iou[0], None);
        assert_eq!(none.miou, Some(1.0));
        assert!(mask_metrics(&[true], &[true, false]).is_err());
    }
}
