//! Clutter removal and view-consistent inpainting for posed RGB-D
//! sequences.

pub mod consistency;
pub mod error;
pub mod fuse;
pub mod geometry;
pub mod image;
pub mod inpaint;
pub mod io;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod raycast;
pub mod refine;
pub mod regions;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraModel, DepthMap};
pub use image::{Mask, RgbImage};
pub use scene::{Frame, LabeledMesh, SceneBundle};
