//! Test backend that corrupts the depth of an inner completer on the first
//! iteration, so each consistency stage has something to reject.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::regions::{label_regions, Connectivity};

use super::{BackendContext, DepthCompleter, InpaintRequest, PlanefitDepth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Every pixel in front of the captured surface.
    InFront,
    /// 70% of pixels in front of the capture, the rest pushed behind the truth.
    MostlyInFront,
    /// Halfway between the captured clutter and the true surface.
    Floating,
    /// Behind the true surface.
    Behind,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [Corruption::InFront, Corruption::MostlyInFront, Corruption::Floating, Corruption::Behind];

    pub fn apply(self, x: usize, y: usize, captured: f64, base: f64) -> f64 {
        match self {
            Corruption::InFront => 0.7 * captured,
            Corruption::MostlyInFront if (x + y) % 10 < 7 => 0.7 * captured,
            Corruption::MostlyInFront => base + 0.3,
            Corruption::Floating => captured + 0.5 * (base - captured),
            Corruption::Behind => base + 0.4,
        }
    }
}

pub struct AdversarialDepth {
    inner: Box<dyn DepthCompleter>,
    captured: Arc<Vec<DepthMap>>,
    fraction: f64,
    seed: u64,
}

impl AdversarialDepth {
    pub fn new(inner: Box<dyn DepthCompleter>, captured: Arc<Vec<DepthMap>>, fraction: f64, seed: u64) -> Self {
        Self {
            inner,
            captured,
            fraction,
            seed,
        }
    }

    /// Planefit wrapped with corruption, using the context's captured depths.
    pub fn from_context(ctx: &BackendContext) -> Result<Self> {
        let captured = ctx.captured_depths.clone().ok_or_else(|| Error::Backend {
            backend: "adversarial".into(),
            reason: "captured depths are required".into(),
        })?;
        Ok(Self::new(
            Box::new(PlanefitDepth::new(&ctx.params)),
            captured,
            ctx.params.adversarial_fraction,
            ctx.params.seed,
        ))
    }

    pub fn corrupts_frame(&self, frame: usize) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xAD5E_u64 ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.gen_bool(self.fraction.clamp(0.0, 1.0))
    }
}

impl DepthCompleter for AdversarialDepth {
    fn name(&self) -> &str {
        "adversarial"
    }

    fn complete_depth(&self, req: &InpaintRequest<'_>) -> Result<DepthMap> {
        let (mut out, unfillable) = match self.inner.complete_depth(req) {
            Ok(d) => (d, None),
            Err(Error::Unfillable { pixels, partial }) => (*partial, Some(pixels)),
            Err(e) => return Err(e),
        };
        if req.iteration == 0 && self.corrupts_frame(req.frame_index) {
            let cap = self.captured.get(req.frame_index).ok_or_else(|| Error::Backend {
                backend: "adversarial".into(),
                reason: format!("no captured depth for frame {}", req.frame_index),
            })?;
            let w = out.width;
            let regions = label_regions(req.hole_mask, Connectivity::Four);
            for (ri, region) in regions.regions.iter().enumerate() {
                let kind = Corruption::ALL[(ri + req.frame_index) % Corruption::ALL.len()];
                for &i in region {
                    let (c, b) = (cap.data[i], out.data[i]);
                    if c > 0.0 && b > 0.0 {
                        out.data[i] = kind.apply(i % w, i / w, c, b);
                    }
                }
            }
        }
        match unfillable {
            Some(pixels) => Err(Error::Unfillable {
                pixels,
                partial: Box::new(out),
            }),
            None => Ok(out),
        }
    }
}
