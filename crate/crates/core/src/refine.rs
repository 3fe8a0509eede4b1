//! Iterative inpaint → consistency loop.
//!
//! Each iteration inpaints the current residual holes of every frame, runs
//! the consistency stages over all frames together, writes the surviving
//! pixels into the frame, and reopens the rejected ones as the next
//! iteration's holes. Hole pixels without captured depth can never pass the
//! pixel rule and are dropped after their first rejection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{run_stages, ConsistencyConfig, FrameDiagnostics, ViewInput};
use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::image::{Mask, RgbImage};
use crate::inpaint::{run_color, run_depth, BackendContext, ColorInpainter, DepthCompleter, InpaintRequest, Registry};
use crate::mask::mask_frame;
use crate::scene::{Frame, InpaintState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub max_iterations: usize,
    /// Stop when an iteration accepts fewer pixels than this.
    pub min_progress_pixels: usize,
    /// Meters; deeper pixels are not fused.
    pub fuse_max_depth: f64,
    pub fuse_max_points: usize,
    pub tsdf_voxel: f64,
    pub tsdf_trunc: f64,
    /// Upper bound on allocated TSDF voxels.
    pub tsdf_max_voxels: u64,
    /// Seed for point-cloud subsampling.
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            min_progress_pixels: 1,
            fuse_max_depth: 3.5,
            fuse_max_points: 16_000_000,
            tsdf_voxel: 0.02,
            tsdf_trunc: 0.08,
            tsdf_max_voxels: 1 << 27,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.fuse_max_depth > 0.0) {
            return bad(format!("fuse_max_depth must be positive, got {}", self.fuse_max_depth));
        }
        if self.fuse_max_points == 0 {
            return bad("fuse_max_points must be positive".into());
        }
        if !(self.tsdf_voxel > 0.0) {
            return bad(format!("tsdf_voxel must be positive, got {}", self.tsdf_voxel));
        }
        if !(self.tsdf_trunc >= self.tsdf_voxel) {
            return bad(format!(
                "tsdf_trunc ({}) must be at least tsdf_voxel ({})",
                self.tsdf_trunc, self.tsdf_voxel
            ));
        }
        Ok(())
    }
}

/// A color backend and a depth backend used together.
pub struct Backends {
    pub color: Box<dyn ColorInpainter>,
    pub depth: Box<dyn DepthCompleter>,
}

impl Backends {
    pub fn from_registry(registry: &Registry, color: &str, depth: &str, ctx: &BackendContext) -> Result<Self> {
        Ok(Self {
            color: registry.make_color(color, ctx)?,
            depth: registry.make_depth(depth, ctx)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// No residual holes remain.
    Converged,
    MaxIterations,
    NoProgress,
}

/// Totals over all frames for one iteration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub holes: usize,
    pub inpainted: usize,
    pub after_single_pixel: usize,
    pub after_single_region: usize,
    pub after_cross_frame: usize,
    pub after_voting: usize,
    pub zero_support: usize,
    /// Hole pixels written into the frames.
    pub accepted: usize,
    /// Rejected pixels without captured depth, removed from the holes.
    pub dropped: usize,
    /// Holes carried into the next iteration.
    pub residual: usize,
    pub frames: Vec<FrameDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackReport {
    pub holes: usize,
    /// Pixels the unconstrained pass filled.
    pub filled: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineReport {
    pub iterations: Vec<IterationReport>,
    pub termination: Termination,
    /// Present when the loop ended with holes and a final unchecked pass ran.
    pub fallback: Option<FallbackReport>,
    /// Hole pixels left empty at the end.
    pub residual: usize,
}

impl RefineReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Completed RGB-D for one frame; unfilled pixels have depth 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletedView {
    pub color: RgbImage,
    pub depth: DepthMap,
}

#[derive(Clone, Debug)]
pub struct RefineOutput {
    pub views: Vec<CompletedView>,
    /// Inputs and stage outputs of the last checked iteration per frame.
    pub states: Vec<InpaintState>,
    pub report: RefineReport,
}

/// One backend pass over every frame: color first, then depth guided by
/// the new color.
pub fn inpaint_all(
    frames: &[Frame],
    current: &[CompletedView],
    holes: &[Mask],
    backends: &Backends,
    iteration: usize,
) -> Result<Vec<(RgbImage, DepthMap)>> {
    (0..frames.len())
        .into_par_iter()
        .map(|i| {
            let wrap = |e: Error| Error::Iteration {
                iteration,
                frame: i,
                source: Box::new(e),
            };
            let mut req = InpaintRequest {
                frame_index: i,
                iteration,
                camera: &frames[i].camera,
                color: &current[i].color,
                depth: &current[i].depth,
                hole_mask: &holes[i],
                guidance: None,
            };
            let color = run_color(backends.color.as_ref(), &req).map_err(wrap)?;
            req.guidance = Some(&color);
            let depth = run_depth(backends.depth.as_ref(), &req).map_err(wrap)?;
            Ok((color, depth))
        })
        .collect()
}

/// Runs the loop on frames whose `mask` marks the pixels to remove.
pub fn refine(frames: &[Frame], backends: &Backends, ccfg: &ConsistencyConfig, rcfg: &RefineConfig) -> Result<RefineOutput> {
    rcfg.validate()?;
    ccfg.validate()?;
    let mut current = frames
        .iter()
        .map(|f| {
            let (color, depth) = mask_frame(&f.color, &f.depth_cap, &f.mask)?;
            Ok(CompletedView { color, depth })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut holes: Vec<Mask> = frames.iter().map(|f| f.mask.clone()).collect();
    let mut states: Vec<InpaintState> = current
        .iter()
        .zip(&holes)
        .map(|(v, h)| InpaintState {
            color_pre: v.color.clone(),
            depth_pre: v.depth.clone(),
            stage_outputs: Vec::new(),
            residual_mask: h.clone(),
        })
        .collect();
    let mut iterations = Vec::new();
    let mut termination = Termination::Converged;

    for iteration in 0..rcfg.max_iterations {
        let total_holes: usize = holes.iter().map(Mask::count).sum();
        if total_holes == 0 {
            break;
        }
        let filled = inpaint_all(frames, &current, &holes, backends, iteration)?;
        let views: Vec<ViewInput<'_>> = frames
            .iter()
            .zip(&filled)
            .zip(&holes)
            .map(|((f, (_, d)), h)| ViewInput {
                camera: &f.camera,
                d_cap: &f.depth_cap,
                d_pre: d,
                holes: h,
                inpainted: &f.mask,
            })
            .collect();
        let outputs = run_stages(&views, ccfg)?;
        drop(views);

        let mut report = IterationReport {
            iteration,
            holes: total_holes,
            ..Default::default()
        };
        let mut next_holes = Vec::with_capacity(frames.len());
        for (i, (out, (color, depth))) in outputs.into_iter().zip(filled).enumerate() {
            let d = &out.diagnostics;
            report.inpainted += d.inpainted;
            report.after_single_pixel += d.after_single_pixel;
            report.after_single_region += d.after_single_region;
            report.after_cross_frame += d.after_cross_frame;
            report.after_voting += d.after_voting;
            report.zero_support += d.vote.zero_support;
            let final_depth = &out.d_con[3];
            let mut next = Mask::new(frames[i].camera.width, frames[i].camera.height);
            for p in 0..next.data.len() {
                if !holes[i].data[p] {
                    continue;
                }
                if final_depth.data[p] > 0.0 {
                    current[i].color.data[p] = color.data[p];
                    current[i].depth.data[p] = final_depth.data[p];
                    report.accepted += 1;
                } else if frames[i].depth_cap.data[p] > 0.0 {
                    next.data[p] = true;
                } else {
                    report.dropped += 1;
                }
            }
            report.residual += next.count();
            report.frames.push(out.diagnostics);
            let [c1, c2, c3, c4] = out.d_con;
            states[i] = InpaintState {
                color_pre: color,
                depth_pre: depth,
                stage_outputs: vec![c1, c2, c3, c4],
                residual_mask: next.clone(),
            };
            next_holes.push(next);
        }
        holes = next_holes;
        let (residual, accepted) = (report.residual, report.accepted);
        log::info!(
            "iteration {iteration}: {} holes, {accepted} accepted, {residual} residual",
            report.holes
        );
        iterations.push(report);
        if residual == 0 {
            termination = Termination::Converged;
            break;
        }
        if accepted < rcfg.min_progress_pixels {
            termination = Termination::NoProgress;
            break;
        }
        termination = Termination::MaxIterations;
    }

    let remaining: usize = holes.iter().map(Mask::count).sum();
    let mut fallback = None;
    let mut residual = remaining;
    if remaining > 0 {
        log::warn!("refinement ended with {remaining} hole pixels ({termination:?}); running unconstrained pass");
        let filled = inpaint_all(frames, &current, &holes, backends, iterations.len())?;
        let mut count = 0;
        for (i, (color, depth)) in filled.into_iter().enumerate() {
            for p in 0..depth.data.len() {
                if holes[i].data[p] && depth.data[p] > 0.0 {
                    current[i].color.data[p] = color.data[p];
                    current[i].depth.data[p] = depth.data[p];
                    holes[i].data[p] = false;
                    count += 1;
                }
            }
            states[i].residual_mask = holes[i].clone();
        }
        residual = remaining - count;
        fallback = Some(FallbackReport {
            holes: remaining,
            filled: count,
        });
    }

    Ok(RefineOutput {
        views: current,
        states,
        report: RefineReport {
            iterations,
            termination,
            fallback,
            residual,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;
    use nalgebra::Matrix4;

    /// Fills every hole with a constant depth and a fixed color.
    struct Constant(f64);

    impl ColorInpainter for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn inpaint_color(&self, req: &InpaintRequest<'_>) -> Result<RgbImage> {
            Ok(RgbImage::filled(req.color.width, req.color.height, [10, 20, 30]))
        }
    }

    impl DepthCompleter for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn complete_depth(&self, req: &InpaintRequest<'_>) -> Result<DepthMap> {
            Ok(DepthMap::filled(req.depth.width, req.depth.height, self.0))
        }
    }

    fn frame(cap: f64) -> Frame {
        let cam = CameraModel::new(20.0, 20.0, 7.5, 5.5, 16, 12, Matrix4::identity()).unwrap();
        let mask = Mask::from_fn(16, 12, |x, y| (4..10).contains(&x) && (3..8).contains(&y));
        Frame::new(0, RgbImage::filled(16, 12, [1, 1, 1]), DepthMap::filled(16, 12, cap), mask, cam).unwrap()
    }

    fn backends(d: f64) -> Backends {
        Backends {
            color: Box::new(Constant(d)),
            depth: Box::new(Constant(d)),
        }
    }

    #[test]
    fn behind_clutter_converges_at_once() {
        let f = frame(2.0);
        let out = refine(&[f.clone()], &backends(3.0), &ConsistencyConfig::default(), &RefineConfig::default()).unwrap();
        assert_eq!(out.report.iterations.len(), 1);
        assert!(out.report.converged());
        assert!(out.report.fallback.is_none());
        for p in 0..f.mask.data.len() {
            let expect = if f.mask.data[p] { 3.0 } else { 2.0 };
            assert_eq!(out.views[0].depth.data[p], expect);
        }
        out.states[0].check_monotone().unwrap();
    }

    #[test]
    fn in_front_of_clutter_falls_back() {
        let f = frame(2.0);
        let out = refine(&[f.clone()], &backends(1.0), &ConsistencyConfig::default(), &RefineConfig::default()).unwrap();
        assert_eq!(out.report.termination, Termination::NoProgress);
        assert_eq!(out.report.iterations.len(), 1);
        let fb = out.report.fallback.as_ref().unwrap();
        assert_eq!(fb.holes, f.mask.count());
        assert_eq!(fb.filled, f.mask.count());
        assert_eq!(out.report.residual, 0);
        assert_eq!(out.views[0].depth.data[5 * 16 + 5], 1.0);
        assert_eq!(out.views[0].color.data[5 * 16 + 5], [10, 20, 30]);
    }

    #[test]
    fn nothing_to_remove() {
        let mut f = frame(2.0);
        f.mask = Mask::new(16, 12);
        let out = refine(&[f.clone()], &backends(3.0), &ConsistencyConfig::default(), &RefineConfig::default()).unwrap();
        assert!(out.report.iterations.is_empty());
        assert!(out.report.converged());
        assert_eq!(out.views[0].depth, f.depth_cap);
    }

    #[test]
    fn config_validation() {
        let bad = RefineConfig {
            tsdf_trunc: 0.01,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = RefineConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
