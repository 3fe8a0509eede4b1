//! Color inpainting and depth completion backends.
//!
//! Backends implement [`ColorInpainter`] or [`DepthCompleter`] and are
//! created by name through a [`Registry`]. Callers go through
//! [`run_color`] / [`run_depth`], which enforce that pixels outside the hole
//! mask come back untouched.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap};
use crate::image::{check_dims, Mask, RgbImage};
use crate::scene::CleanRender;

mod adversarial;
mod diffusion;
mod external;
mod oracle;
mod planefit;
mod training;

pub use adversarial::{AdversarialDepth, Corruption};
pub use diffusion::{diffuse_color, diffuse_depth, DiffusionColor};
pub use external::ExternalBackend;
pub use oracle::OracleBackend;
pub use planefit::{fit_plane, Plane, PlanefitDepth};
pub use training::{pick_partner_frame, synth_training_masks, TrainingSample};

/// One inpainting call for one frame.
#[derive(Clone, Copy, Debug)]
pub struct InpaintRequest<'a> {
    /// Position of the frame in its bundle.
    pub frame_index: usize,
    /// Refinement iteration, starting at 0.
    pub iteration: usize,
    pub camera: &'a CameraModel,
    pub color: &'a RgbImage,
    /// 0 inside the holes.
    pub depth: &'a DepthMap,
    pub hole_mask: &'a Mask,
    /// Completed color used to guide depth completion.
    pub guidance: Option<&'a RgbImage>,
}

impl InpaintRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        let dims = self.camera.dims();
        check_dims("request color", dims, self.color.dims())?;
        check_dims("request depth", dims, self.depth.dims())?;
        check_dims("hole mask", dims, self.hole_mask.dims())?;
        if let Some(g) = self.guidance {
            check_dims("guidance", dims, g.dims())?;
        }
        Ok(())
    }
}

pub trait ColorInpainter: Send + Sync {
    fn name(&self) -> &str;
    fn inpaint_color(&self, req: &InpaintRequest<'_>) -> Result<RgbImage>;
}

pub trait DepthCompleter: Send + Sync {
    fn name(&self) -> &str;
    /// Fills hole pixels. A backend that cannot support some holes returns
    /// [`Error::Unfillable`] with the partial result.
    fn complete_depth(&self, req: &InpaintRequest<'_>) -> Result<DepthMap>;
}

/// Tunables shared by the built-in backends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendParams {
    pub diffusion_max_iters: usize,
    /// Convergence threshold on the max per-pixel change, in [0, 1] color units.
    pub diffusion_tol: f64,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    /// Half-width in pixels of the band around a hole used for plane fitting.
    pub band_px: usize,
    /// Shell command for the external backend.
    pub external_command: Option<String>,
    /// Max concurrent external processes.
    pub external_parallelism: usize,
    /// Fraction of frames the adversarial backend corrupts.
    pub adversarial_fraction: f64,
    pub seed: u64,
}

impl Default for BackendParams {
    fn default() -> Self {
        Self {
            diffusion_max_iters: 500,
            diffusion_tol: 1.0 / 255.0,
            ransac_threshold: 0.01,
            ransac_iterations: 200,
            band_px: 50,
            external_command: None,
            external_parallelism: 2,
            adversarial_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Everything a backend factory may need beyond its parameters.
#[derive(Clone, Debug, Default)]
pub struct BackendContext {
    pub params: BackendParams,
    /// Ground truth, for the oracle backend.
    pub clean_renders: Option<Arc<Vec<CleanRender>>>,
    /// Captured depth per frame, for the adversarial backend.
    pub captured_depths: Option<Arc<Vec<DepthMap>>>,
}

pub type ColorFactory = fn(&BackendContext) -> Result<Box<dyn ColorInpainter>>;
pub type DepthFactory = fn(&BackendContext) -> Result<Box<dyn DepthCompleter>>;

/// Name → factory tables for both backend kinds.
#[derive(Clone)]
pub struct Registry {
    color: BTreeMap<String, ColorFactory>,
    depth: BTreeMap<String, DepthFactory>,
    aliases: BTreeMap<String, String>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            color: BTreeMap::new(),
            depth: BTreeMap::new(),
            aliases: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register_color("diffusion_color", |ctx| Ok(Box::new(DiffusionColor::new(&ctx.params))));
        r.register_color("oracle", |ctx| Ok(Box::new(OracleBackend::new(ctx)?)));
        r.register_color("external", |ctx| Ok(Box::new(ExternalBackend::new(&ctx.params)?)));
        r.register_depth("planefit_depth", |ctx| Ok(Box::new(PlanefitDepth::new(&ctx.params))));
        r.register_depth("oracle", |ctx| Ok(Box::new(OracleBackend::new(ctx)?)));
        r.register_depth("external", |ctx| Ok(Box::new(ExternalBackend::new(&ctx.params)?)));
        r.register_depth("adversarial", |ctx| Ok(Box::new(AdversarialDepth::from_context(ctx)?)));
        r.alias("diffusion", "diffusion_color");
        r.alias("planefit", "planefit_depth");
        r
    }

    pub fn register_color(&mut self, name: &str, f: ColorFactory) {
        self.color.insert(name.to_string(), f);
    }

    pub fn register_depth(&mut self, name: &str, f: DepthFactory) {
        self.depth.insert(name.to_string(), f);
    }

    pub fn alias(&mut self, alias: &str, target: &str) {
        self.aliases.insert(alias.to_string(), target.to_string());
    }

    fn resolve<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn color_names(&self) -> Vec<String> {
        self.color.keys().cloned().collect()
    }

    pub fn depth_names(&self) -> Vec<String> {
        self.depth.keys().cloned().collect()
    }

    /// Whether `name` (or the alias it stands for) is a color backend.
    pub fn has_color(&self, name: &str) -> bool {
        self.color.contains_key(self.resolve(name))
    }

    pub fn has_depth(&self, name: &str) -> bool {
        self.depth.contains_key(self.resolve(name))
    }

    pub fn make_color(&self, name: &str, ctx: &BackendContext) -> Result<Box<dyn ColorInpainter>> {
        let f = self.color.get(self.resolve(name)).ok_or_else(|| Error::UnknownBackend {
            name: name.to_string(),
            available: self.color_names().join(", "),
        })?;
        f(ctx)
    }

    pub fn make_depth(&self, name: &str, ctx: &BackendContext) -> Result<Box<dyn DepthCompleter>> {
        let f = self.depth.get(self.resolve(name)).ok_or_else(|| Error::UnknownBackend {
            name: name.to_string(),
            available: self.depth_names().join(", "),
        })?;
        f(ctx)
    }
}

/// Runs a color backend and restores every pixel outside the hole mask.
pub fn run_color(backend: &dyn ColorInpainter, req: &InpaintRequest<'_>) -> Result<RgbImage> {
    req.validate()?;
    if req.hole_mask.is_empty() {
        return Ok(req.color.clone());
    }
    let mut out = backend.inpaint_color(req)?;
    check_dims(&format!("{} output", backend.name()), req.color.dims(), out.dims())?;
    for (i, &hole) in req.hole_mask.data.iter().enumerate() {
        if !hole {
            out.data[i] = req.color.data[i];
        }
    }
    Ok(out)
}

/// Runs a depth backend and restores every pixel outside the hole mask.
/// Negative or non-finite hole values are rejected; unfilled hole pixels
/// (0) are allowed and stay holes.
pub fn run_depth(backend: &dyn DepthCompleter, req: &InpaintRequest<'_>) -> Result<DepthMap> {
    req.validate()?;
    if req.hole_mask.is_empty() {
        return Ok(req.depth.clone());
    }
    let restore = |mut out: DepthMap| -> Result<DepthMap> {
        check_dims(&format!("{} output", backend.name()), req.depth.dims(), out.dims())?;
        for (i, &hole) in req.hole_mask.data.iter().enumerate() {
            if !hole {
                out.data[i] = req.depth.data[i];
            } else if !(out.data[i] >= 0.0 && out.data[i].is_finite()) {
                return Err(Error::Backend {
                    backend: backend.name().to_string(),
                    reason: format!("invalid depth {} at pixel {i}", out.data[i]),
                });
            }
        }
        Ok(out)
    };
    match backend.complete_depth(req) {
        Ok(d) => restore(d),
        Err(Error::Unfillable { partial, .. }) => restore(*partial),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    pub(crate) fn test_camera(w: usize, h: usize) -> CameraModel {
        CameraModel::new(50.0, 50.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h, Matrix4::identity()).unwrap()
    }

    struct Scribble;
    impl ColorInpainter for Scribble {
        fn name(&self) -> &str {
            "scribble"
        }
        fn inpaint_color(&self, req: &InpaintRequest<'_>) -> Result<RgbImage> {
            Ok(RgbImage::filled(req.color.width, req.color.height, [1, 2, 3]))
        }
    }

    #[test]
    fn registry_lookup_and_custom_backends() {
        let mut r = Registry::with_builtins();
        let ctx = BackendContext::default();
        assert_eq!(r.make_color("diffusion", &ctx).unwrap().name(), "diffusion_color");
        assert_eq!(r.make_depth("planefit", &ctx).unwrap().name(), "planefit_depth");
        match r.make_depth("nlspn", &ctx) {
            Err(Error::UnknownBackend { name, available }) => {
                assert_eq!(name, "nlspn");
                assert!(available.contains("planefit_depth"));
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("unknown backend accepted"),
        }
        // Oracle needs ground truth; external needs a command.
        assert!(r.make_depth("oracle", &ctx).is_err());
        assert!(r.make_color("external", &ctx).is_err());
        r.register_color("scribble", |_| Ok(Box::new(Scribble)));
        let b = r.make_color("scribble", &ctx).unwrap();
        let cam = test_camera(4, 3);
        let color = RgbImage::filled(4, 3, [9, 9, 9]);
        let depth = DepthMap::filled(4, 3, 1.0);
        let mut hole = Mask::new(4, 3);
        hole.set(1, 1, true);
        let req = InpaintRequest {
            frame_index: 0,
            iteration: 0,
            camera: &cam,
            color: &color,
            depth: &depth,
            hole_mask: &hole,
            guidance: None,
        };
        let out = run_color(b.as_ref(), &req).unwrap();
        assert_eq!(out.get(1, 1), [1, 2, 3]);
        assert_eq!(out.get(0, 0), [9, 9, 9]);
    }
}
