use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PlaneSpec, Pixels, ReconError, RenderedImage};
use crate::volume::Volume;

const MAX_SLAB_SAMPLES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlabMode {
    Mip,
    Minip,
    Mean,
}

/// Thick-slab projection: `n_samples` positions spanning `thickness` mm
/// along the plane normal, centred on the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub plane: PlaneSpec,
    pub thickness: f64,
    pub n_samples: usize,
    pub mode: SlabMode,
}

impl SlabSpec {
    pub fn validate(&self) -> Result<(), ReconError> {
        self.plane
            .validate()
            .map_err(|e| ReconError::InvalidSlab(e.to_string()))?;
        let bad = |m: String| Err(ReconError::InvalidSlab(m));
        if !(self.thickness.is_finite() && self.thickness >= 0.0) {
            return bad(format!("thickness must be >= 0, got {}", self.thickness));
        }
        if self.n_samples == 0 || self.n_samples > MAX_SLAB_SAMPLES {
            return bad(format!("n_samples must be within 1..={MAX_SLAB_SAMPLES}"));
        }
        if self.thickness == 0.0 && self.n_samples != 1 {
            return bad("a zero-thickness slab takes exactly one sample".into());
        }
        Ok(())
    }
}

/// Signed offsets (mm) along the normal at which a slab is sampled.
///
/// Offsets are `(k − (n−1)/2) · thickness/(n−1)`, so doubling the thickness
/// together with `n → 2n−1` (n odd) yields a superset of the same offsets.
pub fn slab_offsets(thickness: f64, n_samples: usize) -> Vec<f64> {
    if n_samples <= 1 {
        return vec![0.0];
    }
    let step = thickness / (n_samples - 1) as f64;
    let mid = (n_samples - 1) as f64 / 2.0;
    (0..n_samples).map(|k| (k as f64 - mid) * step).collect()
}

pub fn render_slab(v: &Volume, slab: &SlabSpec, fill: f64) -> Result<RenderedImage, ReconError> {
    slab.validate()?;
    let plane = &slab.plane;
    let normal = plane.normal();
    let offsets = slab_offsets(slab.thickness, slab.n_samples);
    let [w, h] = plane.out_size;
    let mut out = vec![0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        for (c, px) in row.iter_mut().enumerate() {
            let p = plane.point(r, c);
            let samples = offsets
                .iter()
                .map(|&o| v.sample_trilinear(p + normal * o, fill));
            let value = match slab.mode {
                SlabMode::Mip => samples.fold(f64::NEG_INFINITY, f64::max),
                SlabMode::Minip => samples.fold(f64::INFINITY, f64::min),
                SlabMode::Mean => samples.sum::<f64>() / offsets.len() as f64,
            };
            *px = value as f32;
        }
    });
    Ok(RenderedImage {
        width: w,
        height: h,
        pixels: Pixels::Scalar(out),
    })
}
