//! Reconstructions over a [`Volume`](crate::volume::Volume): planar (MPR),
//! slab projections (MIP / MinIP / mean), straightened curved planar
//! reformation and ray-cast volume rendering.
//!
//! Scalar reconstructions return images in the volume's physical units;
//! windowing to 8-bit happens at the output boundary.

mod cpr;
mod plane;
mod slab;
mod vr;

pub use cpr::{build_rmf, render_cpr, Centerline, Frame};
pub use plane::{render_mpr, PlaneSpec};
pub use slab::{render_slab, slab_offsets, SlabMode, SlabSpec};
pub use vr::{
    default_step, ray_alpha_trace, render_vr, turntable_frames, Breakpoint, CameraSpec, TransferFunction,
    EARLY_TERMINATION_ALPHA, REFERENCE_STEP_MM,
};

use thiserror::Error;

/// Largest accepted output edge, in pixels.
pub const MAX_OUTPUT_EDGE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconError {
    #[error("invalid plane: {0}")]
    InvalidPlane(String),
    #[error("invalid slab: {0}")]
    InvalidSlab(String),
    #[error("invalid centerline: {0}")]
    InvalidCenterline(String),
    #[error("degenerate tangent at centerline point {index}")]
    DegenerateTangent { index: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    /// One physical-unit value per pixel, before windowing.
    Scalar(Vec<f32>),
    /// Interleaved 8-bit RGBA.
    Rgba(Vec<u8>),
}

/// Row-major output image.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Pixels,
}

impl RenderedImage {
    pub fn channels(&self) -> usize {
        match self.pixels {
            Pixels::Scalar(_) => 1,
            Pixels::Rgba(_) => 4,
        }
    }

    pub fn scalars(&self) -> Option<&[f32]> {
        match &self.pixels {
            Pixels::Scalar(v) => Some(v),
            Pixels::Rgba(_) => None,
        }
    }

    pub fn rgba(&self) -> Option<&[u8]> {
        match &self.pixels {
            Pixels::Rgba(v) => Some(v),
            Pixels::Scalar(_) => None,
        }
    }

    pub fn scalar_at(&self, row: usize, col: usize) -> f32 {
        self.scalars().expect("scalar image")[row * self.width + col]
    }
}

fn check_output_size(size: [usize; 2], what: &str) -> Result<(), String> {
    if size.iter().any(|&s| s == 0 || s > MAX_OUTPUT_EDGE) {
        return Err(format!(
            "{what} size {}x{} must be within 1..={MAX_OUTPUT_EDGE}",
            size[0], size[1]
        ));
    }
    Ok(())
}
