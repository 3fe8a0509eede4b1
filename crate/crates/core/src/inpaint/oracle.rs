//! Ground-truth backend: returns the stored clean renders.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::image::{check_dims, RgbImage};
use crate::scene::CleanRender;

use super::{BackendContext, ColorInpainter, DepthCompleter, InpaintRequest};

#[derive(Clone, Debug)]
pub struct OracleBackend {
    truth: Arc<Vec<CleanRender>>,
}

impl OracleBackend {
    pub fn new(ctx: &BackendContext) -> Result<Self> {
        let truth = ctx.clean_renders.clone().ok_or_else(|| Error::Backend {
            backend: "oracle".into(),
            reason: "bundle has no clean renders".into(),
        })?;
        Ok(Self { truth })
    }

    fn get(&self, req: &InpaintRequest<'_>) -> Result<&CleanRender> {
        let r = self.truth.get(req.frame_index).ok_or_else(|| Error::Backend {
            backend: "oracle".into(),
            reason: format!("no clean render for frame {}", req.frame_index),
        })?;
        check_dims("clean render", req.color.dims(), r.color.dims())?;
        Ok(r)
    }
}

impl ColorInpainter for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn inpaint_color(&self, req: &InpaintRequest<'_>) -> Result<RgbImage> {
        Ok(self.get(req)?.color.clone())
    }
}

impl DepthCompleter for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn complete_depth(&self, req: &InpaintRequest<'_>) -> Result<DepthMap> {
        Ok(self.get(req)?.depth.clone())
    }
}
