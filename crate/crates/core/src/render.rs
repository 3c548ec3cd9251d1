//! Reconstruction requests as exchanged over the API and the CLI, and their
//! encoding to PNG.
//!
//! PNG output is byte-deterministic: 8-bit grey or RGBA, no interlacing,
//! zlib level "fast" (`png::Compression::Fast`) and the `Sub` row filter,
//! with no ancillary chunks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recon::{
    self, CameraSpec, Centerline, PlaneSpec, ReconError, RenderedImage, SlabSpec, TransferFunction,
};
use crate::volume::{apply_window, Volume, WindowSpec, DEFAULT_FILL};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("unknown render mode {0:?}")]
    UnknownMode(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("png encoding failed: {0}")]
    Png(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Mpr,
    Slab,
    Cpr,
    Vr,
}

impl RenderMode {
    pub const ALL: [RenderMode; 4] = [RenderMode::Mpr, RenderMode::Slab, RenderMode::Cpr, RenderMode::Vr];

    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::Mpr => "mpr",
            RenderMode::Slab => "slab",
            RenderMode::Cpr => "cpr",
            RenderMode::Vr => "vr",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenderMode {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RenderMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| RenderError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CprSpec {
    pub centerline: Centerline,
    pub half_width: f64,
    pub out_spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrSpec {
    pub camera: CameraSpec,
    pub transfer_function: TransferFunction,
    /// Ray step in mm; half the smallest voxel spacing when omitted.
    #[serde(default)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconSpec {
    Mpr(PlaneSpec),
    Slab(SlabSpec),
    Cpr(CprSpec),
    Vr(VrSpec),
}

impl ReconSpec {
    pub fn mode(&self) -> RenderMode {
        match self {
            ReconSpec::Mpr(_) => RenderMode::Mpr,
            ReconSpec::Slab(_) => RenderMode::Slab,
            ReconSpec::Cpr(_) => RenderMode::Cpr,
            ReconSpec::Vr(_) => RenderMode::Vr,
        }
    }

    /// Decodes the JSON spec for `mode`.
    pub fn from_json(mode: RenderMode, spec: serde_json::Value) -> Result<Self, RenderError> {
        let bad = |e: serde_json::Error| RenderError::InvalidSpec(e.to_string());
        Ok(match mode {
            RenderMode::Mpr => ReconSpec::Mpr(serde_json::from_value(spec).map_err(bad)?),
            RenderMode::Slab => ReconSpec::Slab(serde_json::from_value(spec).map_err(bad)?),
            RenderMode::Cpr => ReconSpec::Cpr(serde_json::from_value(spec).map_err(bad)?),
            RenderMode::Vr => ReconSpec::Vr(serde_json::from_value(spec).map_err(bad)?),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let v = match self {
            ReconSpec::Mpr(s) => serde_json::to_value(s),
            ReconSpec::Slab(s) => serde_json::to_value(s),
            ReconSpec::Cpr(s) => serde_json::to_value(s),
            ReconSpec::Vr(s) => serde_json::to_value(s),
        };
        v.expect("specs serialize")
    }

    /// Checks the spec without rendering.
    pub fn validate(&self) -> Result<(), RenderError> {
        match self {
            ReconSpec::Mpr(p) => p.validate()?,
            ReconSpec::Slab(s) => s.validate()?,
            ReconSpec::Cpr(c) => {
                recon::build_rmf(&c.centerline)?;
                if !(c.half_width > 0.0 && c.out_spacing > 0.0) {
                    return Err(ReconError::InvalidParameter(
                        "half_width and out_spacing must be positive".into(),
                    )
                    .into());
                }
            }
            ReconSpec::Vr(v) => {
                v.camera.validate()?;
                if let Some(step) = v.step {
                    if !(step.is_finite() && step > 0.0) {
                        return Err(ReconError::InvalidParameter(format!("step must be positive, got {step}")).into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Out-of-volume value: air for CT, the volume minimum otherwise.
pub fn fill_value(modality: &str, v: &Volume) -> f64 {
    if modality.eq_ignore_ascii_case("CT") {
        DEFAULT_FILL
    } else {
        v.value_range().0 as f64
    }
}

/// Soft-tissue window for CT; the full value range otherwise.
pub fn default_window(modality: &str, v: &Volume) -> WindowSpec {
    if modality.eq_ignore_ascii_case("CT") {
        return WindowSpec {
            center: 40.0,
            width: 400.0,
        };
    }
    let (lo, hi) = v.value_range();
    let (lo, hi) = (lo as f64, hi as f64);
    WindowSpec {
        center: (lo + hi) / 2.0,
        width: (hi - lo).max(2.0),
    }
}

pub fn reconstruct(v: &Volume, spec: &ReconSpec, fill: f64) -> Result<RenderedImage, RenderError> {
    Ok(match spec {
        ReconSpec::Mpr(p) => recon::render_mpr(v, p, fill)?,
        ReconSpec::Slab(s) => recon::render_slab(v, s, fill)?,
        ReconSpec::Cpr(c) => recon::render_cpr(v, &c.centerline, c.half_width, c.out_spacing, fill)?,
        ReconSpec::Vr(s) => {
            let step = s.step.unwrap_or_else(|| recon::default_step(v));
            recon::render_vr(v, &s.camera, &s.transfer_function, step)?
        }
    })
}

/// Windows scalar images to 8-bit grey; RGBA images pass through.
pub fn encode_png(img: &RenderedImage, window: &WindowSpec) -> Result<Vec<u8>, RenderError> {
    window
        .validate()
        .map_err(|e| RenderError::InvalidWindow(e.to_string()))?;
    let (color, data): (png::ColorType, std::borrow::Cow<[u8]>) = match &img.pixels {
        recon::Pixels::Scalar(s) => (
            png::ColorType::Grayscale,
            s.iter().map(|&x| apply_window(x as f64, window)).collect::<Vec<u8>>().into(),
        ),
        recon::Pixels::Rgba(b) => (png::ColorType::Rgba, b.as_slice().into()),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.set_filter(png::Filter::Sub);
        let mut w = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
        w.write_image_data(&data).map_err(|e| RenderError::Png(e.to_string()))?;
        w.finish().map_err(|e| RenderError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Full pipeline shared by the server and the CLI.
pub fn render_png(
    v: &Volume,
    modality: &str,
    spec: &ReconSpec,
    window: Option<WindowSpec>,
) -> Result<Vec<u8>, RenderError> {
    let window = window.unwrap_or_else(|| default_window(modality, v));
    window
        .validate()
        .map_err(|e| RenderError::InvalidWindow(e.to_string()))?;
    let img = reconstruct(v, spec, fill_value(modality, v))?;
    encode_png(&img, &window)
}

/// Decoded PNG: (width, height, channels, bytes). Used by tests and tools.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), RenderError> {
    let err = |e: png::DecodingError| RenderError::Png(e.to_string());
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().map_err(err)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgba => 4,
        other => return Err(RenderError::Png(format!("unexpected color type {other:?}"))),
    };
    Ok((info.width as usize, info.height as usize, channels, buf))
}
