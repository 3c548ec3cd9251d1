use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_output_size, Pixels, ReconError, RenderedImage};
use crate::volume::Volume;
use crate::Vec3;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Output plane of a planar reformation. `origin` is the centre of the
/// top-left output pixel; columns advance along `u_dir`, rows along `v_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub origin: Vec3,
    pub u_dir: Vec3,
    pub v_dir: Vec3,
    /// (su, sv) in mm per pixel.
    pub out_spacing: [f64; 2],
    /// (width, height) in pixels.
    pub out_size: [usize; 2],
}

impl PlaneSpec {
    pub fn validate(&self) -> Result<(), ReconError> {
        let bad = |m: String| Err(ReconError::InvalidPlane(m));
        if !self.origin.iter().all(|x| x.is_finite()) {
            return bad("origin must be finite".into());
        }
        for (name, d) in [("u_dir", &self.u_dir), ("v_dir", &self.v_dir)] {
            if !((d.norm() - 1.0).abs() <= UNIT_TOLERANCE) {
                return bad(format!("{name} must be a unit vector, norm is {}", d.norm()));
            }
        }
        if !(self.u_dir.dot(&self.v_dir).abs() <= UNIT_TOLERANCE) {
            return bad("u_dir and v_dir must be orthogonal".into());
        }
        if !self.out_spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad(format!("out_spacing must be positive, got {:?}", self.out_spacing));
        }
        check_output_size(self.out_size, "output").or_else(bad)
    }

    pub fn normal(&self) -> Vec3 {
        self.u_dir.cross(&self.v_dir)
    }

    /// Patient position of output pixel (row, col).
    #[inline]
    pub fn point(&self, row: usize, col: usize) -> Vec3 {
        self.origin
            + self.u_dir * (col as f64 * self.out_spacing[0])
            + self.v_dir * (row as f64 * self.out_spacing[1])
    }
}

/// Planar reformation: each pixel is the trilinear sample at its plane point.
pub fn render_mpr(v: &Volume, plane: &PlaneSpec, fill: f64) -> Result<RenderedImage, ReconError> {
    plane.validate()?;
    let [w, h] = plane.out_size;
    let mut out = vec![0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        for (c, px) in row.iter_mut().enumerate() {
            *px = v.sample_trilinear(plane.point(r, c), fill) as f32;
        }
    });
    Ok(RenderedImage {
        width: w,
        height: h,
        pixels: Pixels::Scalar(out),
    })
}
