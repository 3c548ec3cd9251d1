use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_output_size, Pixels, ReconError, RenderedImage};
use crate::volume::Volume;
use crate::Vec3;

/// Sample spacing (mm) at which transfer-function opacities are defined.
pub const REFERENCE_STEP_MM: f64 = 1.0;
pub const EARLY_TERMINATION_ALPHA: f64 = 0.99;
const MIN_UP_ANGLE: f64 = 1e-3;

/// Pinhole camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    /// (width, height) in pixels.
    pub out_size: [usize; 2],
}

/// Camera basis and image-plane half extents at unit distance.
#[derive(Debug, Clone, Copy)]
struct View {
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    half_w: f64,
    half_h: f64,
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), ReconError> {
        let bad = |m: String| Err(ReconError::InvalidCamera(m));
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !(finite(&self.eye) && finite(&self.look_at) && finite(&self.up)) {
            return bad("eye, look_at and up must be finite".into());
        }
        let view = self.look_at - self.eye;
        if view.norm() == 0.0 {
            return bad("eye and look_at coincide".into());
        }
        if (self.up.norm() - 1.0).abs() > 1e-6 {
            return bad(format!("up must be a unit vector, norm is {}", self.up.norm()));
        }
        let angle = view.normalize().dot(&self.up).abs().min(1.0).acos();
        if angle <= MIN_UP_ANGLE {
            return bad("up is parallel to the view direction".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad(format!("fov_deg must be within (0, 180), got {}", self.fov_deg));
        }
        check_output_size(self.out_size, "camera output").or_else(bad)
    }

    fn view(&self) -> View {
        let forward = (self.look_at - self.eye).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        let half_h = (self.fov_deg.to_radians() / 2.0).tan();
        let half_w = half_h * self.out_size[0] as f64 / self.out_size[1] as f64;
        View {
            forward,
            right,
            up,
            half_w,
            half_h,
        }
    }

    /// Unit direction of the ray through the centre of pixel (row, col).
    pub fn ray_direction(&self, row: usize, col: usize) -> Vec3 {
        let v = self.view();
        let [w, h] = self.out_size;
        let x = ((col as f64 + 0.5) / w as f64 * 2.0 - 1.0) * v.half_w;
        let y = (1.0 - (row as f64 + 0.5) / h as f64 * 2.0) * v.half_h;
        (v.forward + v.right * x + v.up * y).normalize()
    }

    /// Continuous (row, col) image coordinates of patient point `p`, or
    /// `None` if it lies behind the eye.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let v = self.view();
        let d = p - self.eye;
        let z = d.dot(&v.forward);
        if z <= 0.0 {
            return None;
        }
        let x = d.dot(&v.right) / z / v.half_w;
        let y = d.dot(&v.up) / z / v.half_h;
        let [w, h] = self.out_size;
        let col = (x + 1.0) / 2.0 * w as f64 - 0.5;
        let row = (1.0 - y) / 2.0 * h as f64 - 0.5;
        Some((row, col))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub value: f64,
    pub alpha: f64,
    pub color: [f64; 3],
}

/// Piecewise-linear map from scalar value to opacity and colour, clamped
/// outside the first and last breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferFunction {
    breakpoints: Vec<Breakpoint>,
}

impl TransferFunction {
    pub fn new(breakpoints: Vec<Breakpoint>) -> Result<Self, ReconError> {
        let bad = |m: String| Err(ReconError::InvalidTransferFunction(m));
        if breakpoints.is_empty() {
            return bad("at least one breakpoint is required".into());
        }
        for (i, b) in breakpoints.iter().enumerate() {
            if !b.value.is_finite() {
                return bad(format!("breakpoint {i} value is not finite"));
            }
            if !(0.0..=1.0).contains(&b.alpha) || !b.color.iter().all(|c| (0.0..=1.0).contains(c)) {
                return bad(format!("breakpoint {i} alpha/color outside [0, 1]"));
            }
            if i > 0 && b.value <= breakpoints[i - 1].value {
                return bad("breakpoint values must be strictly increasing".into());
            }
        }
        Ok(TransferFunction { breakpoints })
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// (alpha, rgb) at scalar `s`.
    pub fn eval(&self, s: f64) -> (f64, [f64; 3]) {
        let bp = &self.breakpoints;
        let first = bp[0];
        let last = bp[bp.len() - 1];
        if s <= first.value {
            return (first.alpha, first.color);
        }
        if s >= last.value {
            return (last.alpha, last.color);
        }
        let i = bp.partition_point(|b| b.value <= s) - 1;
        let (a, b) = (bp[i], bp[i + 1]);
        let t = (s - a.value) / (b.value - a.value);
        let lerp = |x: f64, y: f64| (1.0 - t) * x + t * y;
        (
            lerp(a.alpha, b.alpha),
            [
                lerp(a.color[0], b.color[0]),
                lerp(a.color[1], b.color[1]),
                lerp(a.color[2], b.color[2]),
            ],
        )
    }
}

impl<'de> Deserialize<'de> for TransferFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            breakpoints: Vec<Breakpoint>,
        }
        let raw = Raw::deserialize(d)?;
        TransferFunction::new(raw.breakpoints).map_err(serde::de::Error::custom)
    }
}

/// Default ray step: half the smallest voxel spacing.
pub fn default_step(v: &Volume) -> f64 {
    v.spacing().iter().copied().fold(f64::INFINITY, f64::min) / 2.0
}

/// Parametric interval (mm along `dir`) where the ray stays inside the
/// voxel-centre box. `None` if it misses.
fn clip_ray(v: &Volume, eye: Vec3, dir: Vec3) -> Option<(Vec3, Vec3, f64, f64)> {
    let o = v.patient_to_ijk(eye);
    let d = v.patient_to_index_linear() * dir;
    let hi = v.index_extent();
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a] < 0.0 || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((0.0 - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 < t1).then_some((o, d, t0, t1))
}

struct RayOutput {
    alpha: f64,
    color: [f64; 3],
}

fn cast(
    v: &Volume,
    tf: &TransferFunction,
    eye: Vec3,
    dir: Vec3,
    step: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> RayOutput {
    let mut out = RayOutput {
        alpha: 0.0,
        color: [0.0; 3],
    };
    let Some((o, d, t0, t1)) = clip_ray(v, eye, dir) else {
        return out;
    };
    let exponent = step / REFERENCE_STEP_MM;
    let mut k = 0usize;
    loop {
        let t = t0 + (k as f64 + 0.5) * step;
        if t > t1 {
            break;
        }
        k += 1;
        let s = v.sample_index(o + d * t, f64::NAN);
        if s.is_nan() {
            continue;
        }
        let (a_tf, rgb) = tf.eval(s);
        let a_s = 1.0 - (1.0 - a_tf).powf(exponent);
        let weight = (1.0 - out.alpha) * a_s;
        for c in 0..3 {
            out.color[c] += weight * rgb[c];
        }
        out.alpha += weight;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(out.alpha);
        }
        if out.alpha >= EARLY_TERMINATION_ALPHA {
            break;
        }
    }
    out
}

fn check_step(step: f64) -> Result<(), ReconError> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(ReconError::InvalidParameter(format!("step must be positive, got {step}")))
    }
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Front-to-back ray casting. Output is RGBA8 with premultiplied colour;
/// rays that miss the volume are transparent black.
pub fn render_vr(
    v: &Volume,
    cam: &CameraSpec,
    tf: &TransferFunction,
    step: f64,
) -> Result<RenderedImage, ReconError> {
    cam.validate()?;
    check_step(step)?;
    let [w, h] = cam.out_size;
    let mut out = vec![0u8; w * h * 4];
    out.par_chunks_mut(w * 4).enumerate().for_each(|(r, row)| {
        for c in 0..w {
            let ray = cast(v, tf, cam.eye, cam.ray_direction(r, c), step, None);
            let px = &mut row[c * 4..c * 4 + 4];
            px[0] = to_u8(ray.color[0]);
            px[1] = to_u8(ray.color[1]);
            px[2] = to_u8(ray.color[2]);
            px[3] = to_u8(ray.alpha);
        }
    });
    Ok(RenderedImage {
        width: w,
        height: h,
        pixels: Pixels::Rgba(out),
    })
}

/// Accumulated opacity after each composited sample along one pixel's ray.
pub fn ray_alpha_trace(
    v: &Volume,
    cam: &CameraSpec,
    tf: &TransferFunction,
    step: f64,
    row: usize,
    col: usize,
) -> Result<Vec<f64>, ReconError> {
    cam.validate()?;
    check_step(step)?;
    let mut trace = Vec::new();
    cast(v, tf, cam.eye, cam.ray_direction(row, col), step, Some(&mut trace));
    Ok(trace)
}

/// `n` cameras orbiting `look_at` about the `up` axis in equal angular
/// increments; frame 0 is the input camera.
pub fn turntable_frames(cam: &CameraSpec, n: usize) -> Vec<CameraSpec> {
    let axis = cam.up.normalize();
    (0..n)
        .map(|i| {
            if i == 0 {
                return cam.clone();
            }
            let theta = std::f64::consts::TAU * (i as f64 / n as f64);
            let (s, c) = theta.sin_cos();
            let r = cam.eye - cam.look_at;
            let rotated = r * c + axis.cross(&r) * s + axis * (axis.dot(&r) * (1.0 - c));
            CameraSpec {
                eye: cam.look_at + rotated,
                ..cam.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera(eye: Vec3, size: usize) -> CameraSpec {
        CameraSpec {
            eye,
            look_at: Vec3::new(8.0, 8.0, 8.0),
            up: Vec3::y(),
            fov_deg: 30.0,
            out_size: [size, size],
        }
    }

    fn opaque_white() -> TransferFunction {
        TransferFunction::new(vec![
            Breakpoint {
                value: 0.0,
                alpha: 0.0,
                color: [0.0; 3],
            },
            Breakpoint {
                value: 1000.0,
                alpha: 1.0,
                color: [1.0; 3],
            },
        ])
        .unwrap()
    }

    fn blob() -> Volume {
        Volume::from_fn([17, 17, 17], [1.0; 3], Vec3::zeros(), |i, j, k| {
            let d2 = [i, j, k].iter().map(|&x| (x as f64 - 8.0).powi(2)).sum::<f64>();
            (1000.0 * (-d2 / 8.0).exp()) as f32
        })
        .unwrap()
    }

    #[test]
    fn transparent_tf_gives_zero_image() {
        let tf = TransferFunction::new(vec![Breakpoint {
            value: 0.0,
            alpha: 0.0,
            color: [1.0; 3],
        }])
        .unwrap();
        let img = render_vr(&blob(), &camera(Vec3::new(8.0, 8.0, 60.0), 16), &tf, 0.5).unwrap();
        assert!(img.rgba().unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn blob_centre_is_brightest_at_projection() {
        let cam = camera(Vec3::new(8.0, 8.0, 60.0), 33);
        let img = render_vr(&blob(), &cam, &opaque_white(), 0.5).unwrap();
        let px = img.rgba().unwrap();
        let (mut best, mut at) = (0u8, 0usize);
        for (i, p) in px.chunks(4).enumerate() {
            if p[3] > best {
                best = p[3];
                at = i;
            }
        }
        let (row, col) = cam.project(Vec3::new(8.0, 8.0, 8.0)).unwrap();
        assert!(((at / 33) as f64 - row).abs() <= 1.0 && ((at % 33) as f64 - col).abs() <= 1.0);
    }

    #[test]
    fn alpha_is_monotone_and_bounded() {
        let cam = camera(Vec3::new(30.0, 20.0, 60.0), 8);
        for r in 0..8 {
            for c in 0..8 {
                let tr = ray_alpha_trace(&blob(), &cam, &opaque_white(), 0.5, r, c).unwrap();
                assert!(tr.windows(2).all(|w| w[1] >= w[0]));
                assert!(tr.iter().all(|a| (0.0..=1.0).contains(a)));
            }
        }
    }

    #[test]
    fn transfer_function_clamps_and_interpolates() {
        let tf = opaque_white();
        assert_eq!(tf.eval(-5.0).0, 0.0);
        assert_eq!(tf.eval(500.0).0, 0.5);
        assert_eq!(tf.eval(5000.0), (1.0, [1.0; 3]));
        let bp = |value| Breakpoint {
            value,
            alpha: 0.5,
            color: [0.0; 3],
        };
        assert!(TransferFunction::new(vec![bp(1.0), bp(1.0)]).is_err());
        assert!(TransferFunction::new(vec![]).is_err());
    }

    #[test]
    fn camera_validation() {
        let mut cam = camera(Vec3::new(8.0, 8.0, 60.0), 8);
        cam.up = Vec3::z();
        assert!(matches!(cam.validate(), Err(ReconError::InvalidCamera(_))));
        cam.up = Vec3::y();
        cam.eye = cam.look_at;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn turntable_quarter_turns() {
        let cam = CameraSpec {
            eye: Vec3::new(100.0, 0.0, 0.0),
            look_at: Vec3::zeros(),
            up: Vec3::z(),
            fov_deg: 30.0,
            out_size: [8, 8],
        };
        let frames = turntable_frames(&cam, 4);
        let expected = [
            Vec3::new(100.0, 0.0, 0.0),
            Vec3::new(0.0, 100.0, 0.0),
            Vec3::new(-100.0, 0.0, 0.0),
            Vec3::new(0.0, -100.0, 0.0),
        ];
        for (f, e) in frames.iter().zip(expected) {
            assert!((f.eye - e).norm() <= 1e-9);
        }
        assert_eq!(turntable_frames(&cam, 1), vec![cam.clone()]);
        let eight = turntable_frames(&cam, 8);
        for i in 0..4 {
            assert!((eight[2 * i].eye - frames[i].eye).norm() <= 1e-9);
        }
    }
}
