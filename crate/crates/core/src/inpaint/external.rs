//! Adapter for an external inpainting program.
//!
//! Each request is written to a fresh temporary directory and the command
//! runs through `sh -c` with these variables set:
//!
//! - `VF_KIND`: `color` or `depth`
//! - `VF_IN_COLOR`, `VF_IN_DEPTH`, `VF_IN_MASK`: input PNGs (depth in mm, 16 bit)
//! - `VF_IN_GUIDANCE`: completed color, only for guided depth requests
//! - `VF_OUT`: an empty directory for the results
//! - `VF_FRAME`, `VF_ITERATION`: request indices
//!
//! The program exits 0 and writes `color.png`, or `depth.vfd` / `depth.png`,
//! into `VF_OUT`, at the input resolution.

use std::path::Path;
use std::process::Command;
use std::sync::{Condvar, Mutex};

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::image::{check_dims, RgbImage};
use crate::io;

use super::{BackendParams, ColorInpainter, DepthCompleter, InpaintRequest};

/// Counting semaphore bounding concurrent subprocesses.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct ExternalBackend {
    command: String,
    permits: Permits,
}

impl ExternalBackend {
    pub fn new(p: &BackendParams) -> Result<Self> {
        let command = p.external_command.clone().filter(|c| !c.trim().is_empty()).ok_or_else(|| {
            Error::InvalidConfig("the external backend needs a command (external_command)".into())
        })?;
        Ok(Self {
            command,
            permits: Permits {
                free: Mutex::new(p.external_parallelism.max(1)),
                cv: Condvar::new(),
            },
        })
    }

    fn fail(&self, reason: String) -> Error {
        Error::Backend {
            backend: "external".into(),
            reason,
        }
    }

    fn run<T>(&self, kind: &str, req: &InpaintRequest<'_>, read: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
        let _permit = self.permits.acquire();
        let dir = tempfile::tempdir().map_err(|e| self.fail(format!("cannot create temp dir: {e}")))?;
        let p = dir.path();
        let out = p.join("out");
        std::fs::create_dir(&out).map_err(|e| Error::io(&out, e))?;
        io::save_color(&p.join("color.png"), req.color)?;
        io::save_depth_png(&p.join("depth.png"), req.depth)?;
        io::save_mask(&p.join("mask.png"), req.hole_mask)?;
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(&self.command)
            .env("VF_KIND", kind)
            .env("VF_IN_COLOR", p.join("color.png"))
            .env("VF_IN_DEPTH", p.join("depth.png"))
            .env("VF_IN_MASK", p.join("mask.png"))
            .env("VF_OUT", &out)
            .env("VF_FRAME", req.frame_index.to_string())
            .env("VF_ITERATION", req.iteration.to_string());
        if let Some(g) = req.guidance {
            io::save_color(&p.join("guidance.png"), g)?;
            cmd.env("VF_IN_GUIDANCE", p.join("guidance.png"));
        }
        let output = cmd.output().map_err(|e| self.fail(format!("cannot start '{}': {e}", self.command)))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
            return Err(self.fail(format!("command exited with {}: {tail}", output.status)));
        }
        read(&out)
    }
}

impl ColorInpainter for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    fn inpaint_color(&self, req: &InpaintRequest<'_>) -> Result<RgbImage> {
        let img = self.run("color", req, |out| io::load_color(&out.join("color.png")))?;
        check_dims("external color output", req.color.dims(), img.dims())?;
        Ok(img)
    }
}

impl DepthCompleter for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    fn complete_depth(&self, req: &InpaintRequest<'_>) -> Result<DepthMap> {
        let d = self.run("depth", req, |out| {
            let vfd = out.join("depth.vfd");
            if vfd.exists() {
                io::load_depth_vfd(&vfd)
            } else {
                io::load_depth_png(&out.join("depth.png"))
            }
        })?;
        check_dims("external depth output", req.depth.dims(), d.dims())?;
        Ok(d)
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::image::Mask;
    use crate::inpaint::{run_color, run_depth};
    use nalgebra::Matrix4;

    fn with_cmd(cmd: &str) -> ExternalBackend {
        ExternalBackend::new(&BackendParams {
            external_command: Some(cmd.into()),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn echo_backend_round_trip() {
        let cam = crate::geometry::CameraModel::new(10.0, 10.0, 3.5, 2.5, 8, 6, Matrix4::identity()).unwrap();
        let color = RgbImage::filled(8, 6, [5, 6, 7]);
        let depth = DepthMap::filled(8, 6, 1.25);
        let mut hole = Mask::new(8, 6);
        hole.set(2, 2, true);
        let req = InpaintRequest {
            frame_index: 3,
            iteration: 1,
            camera: &cam,
            color: &color,
            depth: &depth,
            hole_mask: &hole,
            guidance: None,
        };
        let b = with_cmd(r#"cp "$VF_IN_COLOR" "$VF_OUT/color.png" && cp "$VF_IN_DEPTH" "$VF_OUT/depth.png" && test "$VF_FRAME" = 3"#);
        assert_eq!(run_color(&b, &req).unwrap(), color);
        assert_eq!(run_depth(&b, &req).unwrap(), depth);

        let failing = with_cmd("echo boom >&2; exit 3");
        match run_color(&failing, &req) {
            Err(Error::Backend { reason, .. }) => assert!(reason.contains("boom"), "{reason}"),
            other => panic!("{other:?}"),
        }
        let missing = with_cmd("true");
        assert!(run_depth(&missing, &req).is_err());
    }
}
