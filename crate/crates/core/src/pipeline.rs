//! End-to-end run over a bundle: mask projection, refinement, fusion.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::consistency::{ConsistencyConfig, StageToggles};
use crate::error::{Error, Result};
use crate::fuse::{fuse, tsdf_fuse, FuseView, FusedCloud, SurfaceMesh};
use crate::geometry::{CameraModel, DepthMap};
use crate::inpaint::{BackendContext, BackendParams, Registry};
use crate::mask::{apply_projected_masks, ProjectionConfig};
use crate::refine::{refine, Backends, CompletedView, RefineConfig, RefineOutput};
use crate::scene::{Frame, SceneBundle};

/// A consistency check that can be switched off for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoSinglePrune,
    NoCrossPrune,
    NoVoting,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoSinglePrune, Ablation::NoCrossPrune, Ablation::NoVoting];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoSinglePrune => "no-single-prune",
            Ablation::NoCrossPrune => "no-cross-prune",
            Ablation::NoVoting => "no-voting",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown ablation '{s}' (expected one of: {})",
                Self::ALL.map(Ablation::name).join(", ")
            ))
        })
    }

    pub fn apply(self, toggles: &mut StageToggles) {
        match self {
            Ablation::NoSinglePrune => toggles.single_frame = false,
            Ablation::NoCrossPrune => toggles.cross_frame = false,
            Ablation::NoVoting => toggles.voting = false,
        }
    }
}

/// The cumulative ablation ladder: no checks, then single-frame pruning,
/// then cross-frame pruning, then voting.
pub fn ablation_ladder() -> [(&'static str, StageToggles); 4] {
    let t = |single_frame, cross_frame, voting| StageToggles {
        single_frame,
        cross_frame,
        voting,
    };
    [
        ("none", t(false, false, false)),
        ("single", t(true, false, false)),
        ("single+cross", t(true, true, false)),
        ("full", t(true, true, true)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend_color: String,
    pub backend_depth: String,
    pub backends: BackendParams,
    /// Project the mesh's clutter into the frames; otherwise the stored
    /// masks are used as they are.
    pub project_masks: bool,
    pub projection: ProjectionConfig,
    pub consistency: ConsistencyConfig,
    pub refine: RefineConfig,
    /// Also build the TSDF surface.
    pub tsdf: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend_color: "diffusion".into(),
            backend_depth: "planefit".into(),
            backends: BackendParams::default(),
            project_masks: true,
            projection: ProjectionConfig::default(),
            consistency: ConsistencyConfig::default(),
            refine: RefineConfig::default(),
            tsdf: true,
        }
    }
}

/// One row of the timing table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: String,
    pub seconds: f64,
    /// Pixels, points or triangles produced, depending on the step.
    pub output_size: usize,
}

pub(crate) fn timed<T>(timings: &mut Vec<StepTiming>, step: &str, size: impl Fn(&T) -> usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{step}: {seconds:.3} s");
    timings.push(StepTiming {
        step: step.to_string(),
        seconds,
        output_size: size(&out),
    });
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Input frames with the masks actually used.
    pub frames: Vec<Frame>,
    pub refine: RefineOutput,
    pub cloud: FusedCloud,
    pub mesh: Option<SurfaceMesh>,
    pub timings: Vec<StepTiming>,
}

/// Backend context for a bundle: clean renders for the oracle and
/// captured depth for the adversarial backend.
pub fn backend_context(bundle: &SceneBundle, params: &BackendParams) -> BackendContext {
    BackendContext {
        params: params.clone(),
        clean_renders: bundle.clean_renders.clone().map(Arc::new),
        captured_depths: Some(Arc::new(bundle.frames.iter().map(|f| f.depth_cap.clone()).collect())),
    }
}

pub fn fuse_views<'a>(cameras: impl IntoIterator<Item = &'a CameraModel>, views: &'a [CompletedView]) -> Vec<FuseView<'a>> {
    cameras
        .into_iter()
        .zip(views)
        .map(|(camera, v)| FuseView {
            camera,
            color: &v.color,
            depth: &v.depth,
        })
        .collect()
}

/// World points of the masked pixels of each frame, taking depth from
/// `depths` and keeping only values in `(0, max_depth]`.
pub fn masked_points(frames: &[Frame], depths: &[&DepthMap], max_depth: f64) -> Result<Vec<Point3<f64>>> {
    let mut pts = Vec::new();
    for (f, d) in frames.iter().zip(depths) {
        let w = f.camera.width;
        for (i, &z) in d.data.iter().enumerate() {
            if f.mask.data[i] && z > 0.0 && z <= max_depth {
                pts.push(f.camera.unproject((i % w) as f64, (i / w) as f64, z)?);
            }
        }
    }
    Ok(pts)
}

pub fn run(bundle: &SceneBundle, cfg: &PipelineConfig, registry: &Registry) -> Result<PipelineOutput> {
    bundle.validate()?;
    let mut timings = Vec::new();
    let mut frames = bundle.frames.clone();
    if cfg.project_masks {
        timed(&mut timings, "project_masks", |n: &usize| *n, || {
            apply_projected_masks(&bundle.mesh, &mut frames, &cfg.projection)?;
            Ok(frames.iter().map(|f| f.mask.count()).sum())
        })?;
    }
    let ctx = backend_context(bundle, &cfg.backends);
    let backends = Backends::from_registry(registry, &cfg.backend_color, &cfg.backend_depth, &ctx)?;
    let refined = timed(
        &mut timings,
        "refine",
        |r: &RefineOutput| r.report.iterations.iter().map(|i| i.accepted).sum(),
        || refine(&frames, &backends, &cfg.consistency, &cfg.refine),
    )?;
    let views = fuse_views(frames.iter().map(|f| &f.camera), &refined.views);
    let cloud = timed(&mut timings, "fuse", |c: &FusedCloud| c.len(), || fuse(&views, &cfg.refine))?;
    let mesh = if cfg.tsdf {
        Some(timed(&mut timings, "tsdf", |m: &SurfaceMesh| m.triangles.len(), || tsdf_fuse(&views, &cfg.refine))?)
    } else {
        None
    };
    drop(views);
    Ok(PipelineOutput {
        frames,
        refine: refined,
        cloud,
        mesh,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.name()).unwrap(), a);
        }
        assert!(matches!(Ablation::parse("no-vote"), Err(Error::InvalidConfig(_))));
        let mut t = StageToggles::default();
        Ablation::NoVoting.apply(&mut t);
        assert!(t.single_frame && t.cross_frame && !t.voting);
        let ladder = ablation_ladder();
        assert_eq!(ladder[3].1, StageToggles::default());
    }
}
