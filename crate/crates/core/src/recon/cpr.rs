use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_output_size, Pixels, ReconError, RenderedImage};
use crate::volume::Volume;
use crate::Vec3;

/// Polyline through a structure of interest (e.g. a vessel), in mm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Centerline {
    points: Vec<Vec3>,
    arc_length: Vec<f64>,
}

impl Centerline {
    pub fn new(points: Vec<Vec3>) -> Result<Self, ReconError> {
        if points.len() < 2 {
            return Err(ReconError::InvalidCenterline(format!(
                "needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(ReconError::InvalidCenterline("points must be finite".into()));
        }
        let mut arc_length = Vec::with_capacity(points.len());
        arc_length.push(0.0);
        for i in 1..points.len() {
            let step = (points[i] - points[i - 1]).norm();
            if step == 0.0 {
                return Err(ReconError::DegenerateTangent { index: i });
            }
            arc_length.push(arc_length[i - 1] + step);
        }
        Ok(Centerline { points, arc_length })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Cumulative arc length at each point; strictly increasing from 0.
    pub fn arc_length(&self) -> &[f64] {
        &self.arc_length
    }

    pub fn length(&self) -> f64 {
        *self.arc_length.last().unwrap()
    }

    /// Segment index and blend weight for arc length `s` (clamped).
    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.length());
        let upper = self.arc_length.partition_point(|&a| a <= s);
        let i = upper.saturating_sub(1).min(self.points.len() - 2);
        let t = (s - self.arc_length[i]) / (self.arc_length[i + 1] - self.arc_length[i]);
        (i, t)
    }
}

impl<'de> Deserialize<'de> for Centerline {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            points: Vec<Vec3>,
        }
        let raw = Raw::deserialize(d)?;
        Centerline::new(raw.points).map_err(serde::de::Error::custom)
    }
}

/// Orthonormal moving frame; `binormal = tangent × normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub tangent: Vec3,
    pub normal: Vec3,
    pub binormal: Vec3,
}

fn tangents(c: &Centerline) -> Result<Vec<Vec3>, ReconError> {
    let p = &c.points;
    let n = p.len();
    (0..n)
        .map(|i| {
            let d = match i {
                0 => p[1] - p[0],
                _ if i == n - 1 => p[n - 1] - p[n - 2],
                _ => p[i + 1] - p[i - 1],
            };
            let len = d.norm();
            if len <= f64::EPSILON * p[i].norm().max(1.0) {
                return Err(ReconError::DegenerateTangent { index: i });
            }
            Ok(d / len)
        })
        .collect()
}

/// Unit normal to `t` from the coordinate axis least parallel to it
/// (ties resolved in x, y, z order).
fn initial_normal(t: &Vec3) -> Vec3 {
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut best = 0;
    for a in 1..3 {
        if t[a].abs() < t[best].abs() {
            best = a;
        }
    }
    t.cross(&axes[best]).normalize()
}

fn reflect(v: &Vec3, across: &Vec3, c: f64) -> Vec3 {
    v - across * (2.0 / c * across.dot(v))
}

/// Rotation-minimizing frames along the centerline, propagated with the
/// double-reflection method.
pub fn build_rmf(c: &Centerline) -> Result<Vec<Frame>, ReconError> {
    let t = tangents(c)?;
    let mut frames = Vec::with_capacity(t.len());
    let n0 = initial_normal(&t[0]);
    frames.push(Frame {
        tangent: t[0],
        normal: n0,
        binormal: t[0].cross(&n0),
    });
    for i in 0..t.len() - 1 {
        let prev = frames[i];
        if t[i + 1] == prev.tangent {
            frames.push(prev);
            continue;
        }
        let v1 = c.points[i + 1] - c.points[i];
        let c1 = v1.dot(&v1);
        let r_l = reflect(&prev.normal, &v1, c1);
        let t_l = reflect(&prev.tangent, &v1, c1);
        let v2 = t[i + 1] - t_l;
        let c2 = v2.dot(&v2);
        let mut r = if c2 > 1e-300 { reflect(&r_l, &v2, c2) } else { r_l };
        // re-orthonormalize against drift
        r -= t[i + 1] * t[i + 1].dot(&r);
        let r = r.normalize();
        frames.push(Frame {
            tangent: t[i + 1],
            normal: r,
            binormal: t[i + 1].cross(&r),
        });
    }
    Ok(frames)
}

/// Straightened curved planar reformation.
///
/// Row `r` samples arc length `s = r·out_spacing`; column `c` samples the
/// offset `t = −half_width + c·out_spacing` along the interpolated normal.
pub fn render_cpr(
    v: &Volume,
    c: &Centerline,
    half_width: f64,
    out_spacing: f64,
    fill: f64,
) -> Result<RenderedImage, ReconError> {
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(ReconError::InvalidParameter(format!(
            "half_width must be positive, got {half_width}"
        )));
    }
    if !(out_spacing.is_finite() && out_spacing > 0.0) {
        return Err(ReconError::InvalidParameter(format!(
            "out_spacing must be positive, got {out_spacing}"
        )));
    }
    let frames = build_rmf(c)?;
    let width = (2.0 * half_width / out_spacing + 1e-9).floor() as usize + 1;
    let height = (c.length() / out_spacing + 1e-9).floor() as usize + 1;
    check_output_size([width, height], "CPR output").map_err(ReconError::InvalidParameter)?;

    let mut out = vec![0f32; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        let (i, w) = c.locate(r as f64 * out_spacing);
        let point = c.points[i] * (1.0 - w) + c.points[i + 1] * w;
        let normal = (frames[i].normal * (1.0 - w) + frames[i + 1].normal * w).normalize();
        for (col, px) in row.iter_mut().enumerate() {
            let t = -half_width + col as f64 * out_spacing;
            *px = v.sample_trilinear(point + normal * t, fill) as f32;
        }
    });
    Ok(RenderedImage {
        width,
        height,
        pixels: Pixels::Scalar(out),
    })
}
