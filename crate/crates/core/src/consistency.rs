//! Single-frame and cross-frame consistency checks on inpainted depth.
//!
//! Every stage decides, per hole pixel, whether to keep it, and its output is
//! its input with the rejected pixels zeroed. Decisions depend only on the
//! captured depth, the inpainted depth, and the masks, never on another
//! stage's output, so each stage is idempotent and the valid sets shrink
//! monotonically from stage to stage. Pixels outside the hole mask pass
//! through untouched (except where the capture is empty).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap, Splatter};
use crate::image::{check_dims, Mask};
use crate::regions::{label_regions, Connectivity};

/// How a hole region's captured and inpainted depths are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionAggregate {
    /// Mean captured depth must lie in front of mean inpainted depth.
    #[default]
    Mean,
    /// Same comparison on the per-region minima.
    Min,
    /// Every pixel of the region must pass the pixel rule.
    AllPixels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub single_frame: bool,
    pub cross_frame: bool,
    pub voting: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            single_frame: true,
            cross_frame: true,
            voting: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    /// Voting agreement distance in meters.
    pub alpha: f64,
    /// Voting keeps a pixel when more than this percentage of supports agree.
    pub beta_percent: f64,
    /// Hole regions larger than this fraction of the image are dropped.
    pub max_region_fraction: f64,
    /// Slack in meters applied to every in-front-of comparison.
    pub occlusion_tol: f64,
    pub connectivity: Connectivity,
    pub region_aggregate: RegionAggregate,
    /// Drop pixels that no other view supports.
    pub strict_voting: bool,
    pub stages: StageToggles,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta_percent: 30.0,
            max_region_fraction: 0.5,
            occlusion_tol: 0.01,
            connectivity: Connectivity::Four,
            region_aggregate: RegionAggregate::Mean,
            strict_voting: false,
            stages: StageToggles::default(),
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta_percent > 0.0 && self.beta_percent < 100.0) {
            return bad(format!("beta must lie in (0, 100), got {}", self.beta_percent));
        }
        if !(self.max_region_fraction > 0.0 && self.max_region_fraction <= 1.0) {
            return bad(format!("max_region_fraction must lie in (0, 1], got {}", self.max_region_fraction));
        }
        if !(self.occlusion_tol >= 0.0) || !self.occlusion_tol.is_finite() {
            return bad(format!("occlusion_tol must be >= 0, got {}", self.occlusion_tol));
        }
        Ok(())
    }
}

/// One view as seen by the consistency checks.
#[derive(Clone, Copy, Debug)]
pub struct ViewInput<'a> {
    pub camera: &'a CameraModel,
    pub d_cap: &'a DepthMap,
    /// Current inpainted depth: captured depth outside the holes, backend
    /// output (or earlier accepted values) inside.
    pub d_pre: &'a DepthMap,
    /// Pixels inpainted in the current iteration; only these are judged.
    pub holes: &'a Mask,
    /// All pixels whose depth comes from inpainting (the removal mask).
    pub inpainted: &'a Mask,
}

impl ViewInput<'_> {
    pub fn validate(&self) -> Result<()> {
        let d = self.camera.dims();
        check_dims("captured depth", d, self.d_cap.dims())?;
        check_dims("inpainted depth", d, self.d_pre.dims())?;
        check_dims("hole mask", d, self.holes.dims())?;
        check_dims("inpainted mask", d, self.inpainted.dims())
    }
}

fn masked(input: &DepthMap, keep: impl Fn(usize) -> bool) -> DepthMap {
    let mut out = input.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        if !keep(i) {
            *v = 0.0;
        }
    }
    out
}

/// Pixel rule: an inpainted pixel must not lie in front of the captured
/// (clutter) surface, and pixels with no capture are dropped.
#[inline]
pub fn pixel_rule(d_cap: f64, d_pre: f64, tol: f64) -> bool {
    d_cap > 0.0 && d_pre > 0.0 && d_cap < d_pre + tol
}

/// d_con¹.
pub fn prune_single_pixel(view: &ViewInput<'_>, cfg: &ConsistencyConfig) -> DepthMap {
    let (cap, pre, holes) = (&view.d_cap.data, &view.d_pre.data, &view.holes.data);
    masked(view.d_pre, |i| cap[i] > 0.0 && (!holes[i] || pixel_rule(cap[i], pre[i], cfg.occlusion_tol)))
}

/// Per-region keep decision for d_con². Returns one flag per region of
/// `label_regions(holes, connectivity)`.
pub fn region_decisions(view: &ViewInput<'_>, cfg: &ConsistencyConfig) -> Vec<bool> {
    let (w, h) = view.camera.dims();
    let cap_px = cfg.max_region_fraction * (w * h) as f64;
    let regions = label_regions(view.holes, cfg.connectivity);
    regions
        .regions
        .iter()
        .map(|r| {
            if r.len() as f64 > cap_px {
                return false;
            }
            let valid: Vec<(f64, f64)> = r
                .iter()
                .map(|&i| (view.d_cap.data[i], view.d_pre.data[i]))
                .filter(|&(c, p)| c > 0.0 && p > 0.0)
                .collect();
            if valid.is_empty() {
                return false;
            }
            let tol = cfg.occlusion_tol;
            match cfg.region_aggregate {
                RegionAggregate::Mean => {
                    let n = valid.len() as f64;
                    let mc = valid.iter().map(|v| v.0).sum::<f64>() / n;
                    let mp = valid.iter().map(|v| v.1).sum::<f64>() / n;
                    mc < mp + tol
                }
                RegionAggregate::Min => {
                    let mc = valid.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
                    let mp = valid.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
                    mc < mp + tol
                }
                RegionAggregate::AllPixels => r.iter().all(|&i| pixel_rule(view.d_cap.data[i], view.d_pre.data[i], tol)),
            }
        })
        .collect()
}

/// d_con²: zeroes whole hole regions that fail the region rule.
pub fn prune_single_region(view: &ViewInput<'_>, d_con1: &DepthMap, cfg: &ConsistencyConfig) -> DepthMap {
    let keep_region = region_decisions(view, cfg);
    let labels = label_regions(view.holes, cfg.connectivity).labels;
    masked(d_con1, |i| !view.holes.data[i] || keep_region[labels[i] as usize])
}

/// Whether the inpainted point at source pixel `(x, y)` of view `s` sits
/// visibly in front of what view `t` captured. Two tests must both flag it:
/// the tangent-corrected depth against the capture at the landing pixel,
/// and the raw depth against every valid capture in the 2×2 neighbourhood of
/// the continuous landing position.
pub fn occludes_capture(sp: &Splatter<'_>, d_pre_s: &DepthMap, x: usize, y: usize, d_cap_t: &DepthMap, tol: f64) -> bool {
    let Ok(l) = sp.land(d_pre_s, x, y) else {
        return false;
    };
    let c0 = d_cap_t.data[l.index];
    if c0 <= 0.0 {
        return false;
    }
    if !(l.point.z < footprint_min(d_cap_t, l.u, l.v) - tol) {
        return false;
    }
    sp.corrected_depth(d_pre_s, x, y, &l) < c0 - tol
}

/// Smallest valid depth among the up to four pixels around the continuous
/// position `(u, v)`; infinite if none is valid.
pub fn footprint_min(depth: &DepthMap, u: f64, v: f64) -> f64 {
    let (w, h) = (depth.width as i64, depth.height as i64);
    let (fx, fy) = (u.floor() as i64, v.floor() as i64);
    let mut nearest = f64::INFINITY;
    for yy in fy.max(0)..=(fy + 1).min(h - 1) {
        for xx in fx.max(0)..=(fx + 1).min(w - 1) {
            let d = depth.get(xx as usize, yy as usize);
            if d > 0.0 {
                nearest = nearest.min(d);
            }
        }
    }
    nearest
}

/// d_con³ for every view.
pub fn prune_cross_frame(views: &[ViewInput<'_>], d_con2: &[DepthMap], cfg: &ConsistencyConfig) -> Vec<DepthMap> {
    (0..views.len())
        .into_par_iter()
        .map(|s| {
            let vs = &views[s];
            let (w, _) = vs.camera.dims();
            let splatters: Vec<(usize, Splatter<'_>)> = (0..views.len())
                .filter(|&t| t != s)
                .map(|t| (t, Splatter::new(vs.camera, views[t].camera)))
                .collect();
            let input = &d_con2[s];
            masked(input, |i| {
                if !vs.holes.data[i] || input.data[i] <= 0.0 {
                    return true;
                }
                let (x, y) = (i % w, i / w);
                !splatters
                    .iter()
                    .any(|(t, sp)| occludes_capture(sp, vs.d_pre, x, y, views[*t].d_cap, cfg.occlusion_tol))
            })
        })
        .collect()
}

/// Voting tallies for one view.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteStats {
    /// Candidates with at least one support.
    pub supported: usize,
    pub zero_support: usize,
    pub rejected: usize,
}

/// What view `t` observes at the 3D point of a pixel of `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    /// Outside t's view, or t sees a surface in front of the point.
    Hidden,
    /// t's depth around the projection matches the point within α.
    Agrees,
    /// t sees a surface behind the point, i.e. through it.
    SeesThrough,
}

/// Projects pixel `(x, y)` of `d_pre_s` into t (via `back`, an s→t
/// splatter) and compares with t's depth over the 2×2 neighbourhood of the
/// continuous projection.
pub fn observe(back: &Splatter<'_>, d_pre_s: &DepthMap, x: usize, y: usize, d_pre_t: &DepthMap, alpha: f64) -> Observation {
    let Ok(l) = back.land(d_pre_s, x, y) else {
        return Observation::Hidden;
    };
    let nearest = footprint_min(d_pre_t, l.u, l.v);
    let z = l.point.z;
    if !nearest.is_finite() || nearest < z - alpha {
        Observation::Hidden
    } else if nearest > z + alpha {
        Observation::SeesThrough
    } else {
        Observation::Agrees
    }
}

/// Per-pixel support counts `(agreeing, total)` for the candidate pixels of
/// view `s`.
///
/// Every other view's inpainted depth is forward-warped into `s` with a
/// z-buffer, and the winner at a candidate pixel counts as a support when it
/// came from that view's inpainted region. A winner within α agrees.
/// Otherwise the winner is only evidence when the two views could have seen
/// each other's surface:
/// - a winner in front disagrees unless s itself sees that surface (or
///   something nearer) around the winner's landing position, as happens
///   when a foreground point straddles a silhouette; then there is no support;
/// - for a winner behind, the candidate's point is projected into t: if t
///   sees through it the support disagrees, if t sees it the support agrees,
///   and if it is hidden in t there is no support.
pub fn vote_counts(views: &[ViewInput<'_>], s: usize, candidates: &[usize], alpha: f64) -> Vec<(u32, u32)> {
    let vs = &views[s];
    let (w, h) = vs.camera.dims();
    let mut slot = vec![u32::MAX; w * h];
    for (k, &i) in candidates.iter().enumerate() {
        slot[i] = k as u32;
    }
    let mut counts = vec![(0u32, 0u32); candidates.len()];
    let mut zbuf = vec![0.0f64; candidates.len()];
    let mut winner = vec![u32::MAX; candidates.len()];
    for (t, vt) in views.iter().enumerate() {
        if t == s {
            continue;
        }
        zbuf.iter_mut().for_each(|z| *z = 0.0);
        winner.iter_mut().for_each(|v| *v = u32::MAX);
        let sp = Splatter::new(vt.camera, vs.camera);
        let back = Splatter::new(vs.camera, vt.camera);
        let (tw, th) = vt.camera.dims();
        for y in 0..th {
            for x in 0..tw {
                let Ok(l) = sp.land(vt.d_pre, x, y) else {
                    continue;
                };
                let k = slot[l.index];
                if k == u32::MAX {
                    continue;
                }
                let k = k as usize;
                let d = sp.corrected_depth(vt.d_pre, x, y, &l);
                if zbuf[k] == 0.0 || d < zbuf[k] {
                    zbuf[k] = d;
                    winner[k] = (y * tw + x) as u32;
                }
            }
        }
        for (k, &i) in candidates.iter().enumerate() {
            let src = winner[k];
            if src == u32::MAX || !vt.inpainted.data[src as usize] {
                continue;
            }
            let own = vs.d_pre.data[i];
            let agrees = if (zbuf[k] - own).abs() <= alpha {
                true
            } else if zbuf[k] < own {
                let src = src as usize;
                match sp.land(vt.d_pre, src % tw, src / tw) {
                    Ok(l) if footprint_min(vs.d_pre, l.u, l.v) <= l.point.z + alpha => continue,
                    _ => false,
                }
            } else {
                match observe(&back, vs.d_pre, i % w, i / w, vt.d_pre, alpha) {
                    Observation::Hidden => continue,
                    Observation::Agrees => true,
                    Observation::SeesThrough => false,
                }
            };
            counts[k].1 += 1;
            if agrees {
                counts[k].0 += 1;
            }
        }
    }
    counts
}

/// Keep rule for voting: strictly more than `beta_percent` of the supports agree.
#[inline]
pub fn vote_keeps(agree: u32, total: u32, cfg: &ConsistencyConfig) -> bool {
    if total == 0 {
        return !cfg.strict_voting;
    }
    100.0 * agree as f64 > cfg.beta_percent * total as f64
}

/// d_con⁴ for every view.
pub fn vote_cross_frame(views: &[ViewInput<'_>], d_con3: &[DepthMap], cfg: &ConsistencyConfig) -> Vec<(DepthMap, VoteStats)> {
    (0..views.len())
        .into_par_iter()
        .map(|s| {
            let vs = &views[s];
            let input = &d_con3[s];
            let candidates: Vec<usize> = (0..input.data.len())
                .filter(|&i| vs.holes.data[i] && input.data[i] > 0.0)
                .collect();
            let counts = vote_counts(views, s, &candidates, cfg.alpha);
            let mut out = input.clone();
            let mut stats = VoteStats::default();
            for (&i, &(agree, total)) in candidates.iter().zip(&counts) {
                if total == 0 {
                    stats.zero_support += 1;
                } else {
                    stats.supported += 1;
                }
                if !vote_keeps(agree, total, cfg) {
                    out.data[i] = 0.0;
                    stats.rejected += 1;
                }
            }
            (out, stats)
        })
        .collect()
}

/// Per-view pixel counts over the hole mask.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub holes: usize,
    /// Hole pixels the backend filled.
    pub inpainted: usize,
    pub after_single_pixel: usize,
    pub after_single_region: usize,
    pub after_cross_frame: usize,
    pub after_voting: usize,
    pub regions: usize,
    pub regions_dropped: usize,
    pub vote: VoteStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutputs {
    /// d_con¹ through d_con⁴.
    pub d_con: [DepthMap; 4],
    pub diagnostics: FrameDiagnostics,
}

/// Runs all enabled stages on every view. Disabled stages pass their input
/// through unchanged.
pub fn run_stages(views: &[ViewInput<'_>], cfg: &ConsistencyConfig) -> Result<Vec<StageOutputs>> {
    cfg.validate()?;
    for v in views {
        v.validate()?;
    }
    let single: Vec<(DepthMap, DepthMap, usize, usize)> = views
        .par_iter()
        .map(|v| {
            let regions = label_regions(v.holes, cfg.connectivity).len();
            if !cfg.stages.single_frame {
                return (v.d_pre.clone(), v.d_pre.clone(), regions, 0);
            }
            let d1 = prune_single_pixel(v, cfg);
            let decisions = region_decisions(v, cfg);
            let d2 = prune_single_region(v, &d1, cfg);
            (d1, d2, regions, decisions.iter().filter(|&&k| !k).count())
        })
        .collect();
    let d2: Vec<DepthMap> = single.iter().map(|s| s.1.clone()).collect();
    let d3 = if cfg.stages.cross_frame {
        prune_cross_frame(views, &d2, cfg)
    } else {
        d2.clone()
    };
    let d4: Vec<(DepthMap, VoteStats)> = if cfg.stages.voting {
        vote_cross_frame(views, &d3, cfg)
    } else {
        d3.iter().map(|d| (d.clone(), VoteStats::default())).collect()
    };
    let count = |v: &ViewInput<'_>, d: &DepthMap| v.holes.data.iter().zip(&d.data).filter(|(&m, &x)| m && x > 0.0).count();
    Ok(views
        .iter()
        .enumerate()
        .zip(single.into_iter().zip(d3.into_iter().zip(d4)))
        .map(|((s, v), ((c1, c2, regions, dropped), (c3, (c4, vote))))| {
            let diagnostics = FrameDiagnostics {
                frame: s,
                holes: v.holes.count(),
                inpainted: count(v, v.d_pre),
                after_single_pixel: count(v, &c1),
                after_single_region: count(v, &c2),
                after_cross_frame: count(v, &c3),
                after_voting: count(v, &c4),
                regions,
                regions_dropped: dropped,
                vote,
            };
            StageOutputs {
                d_con: [c1, c2, c3, c4],
                diagnostics,
            }
        })
        .collect())
}
