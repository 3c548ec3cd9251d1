//! The 3D volume model: voxel grid, patient-coordinate mapping, trilinear
//! sampling and display windowing.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

const DIRECTION_TOLERANCE: f64 = 1e-4;
/// Continuous indices this close to an integer are treated as lying on the
/// node, so that reformations along the native grid reproduce voxels exactly.
const NODE_SNAP: f64 = 1e-9;

/// Out-of-volume fill for CT reformations (air).
pub const DEFAULT_FILL: f64 = -1024.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VolumeError {
    #[error("expected {expected} voxels for dims {dims:?}, got {actual}")]
    VoxelCount {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("all dimensions must be at least 1, got {0:?}")]
    EmptyDimension([usize; 3]),
    #[error("spacing must be positive and finite, got {0:?}")]
    Spacing([f64; 3]),
    #[error("direction vectors must be orthonormal within 1e-4")]
    Directions,
    #[error("window width must exceed 1, got {0}")]
    WindowWidth(f64),
}

/// Immutable 3D scalar grid in physical units (HU for CT).
///
/// Voxel (i, j, k) is a point sample located at
/// `origin + i·sx·row_dir + j·sy·col_dir + k·sz·slice_dir`; voxels are stored
/// x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Vec3,
    directions: [Vec3; 3],
    voxels: Vec<f32>,
    index_to_patient: Matrix3<f64>,
    patient_to_index: Matrix3<f64>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Vec3,
        directions: [Vec3; 3],
        voxels: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::EmptyDimension(dims));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(VolumeError::VoxelCount {
                dims,
                expected,
                actual: voxels.len(),
            });
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::Spacing(spacing));
        }
        for (a, d) in directions.iter().enumerate() {
            if (d.norm() - 1.0).abs() > DIRECTION_TOLERANCE {
                return Err(VolumeError::Directions);
            }
            for e in &directions[a + 1..] {
                if d.dot(e).abs() > DIRECTION_TOLERANCE {
                    return Err(VolumeError::Directions);
                }
            }
        }
        let index_to_patient = Matrix3::from_columns(&[
            directions[0] * spacing[0],
            directions[1] * spacing[1],
            directions[2] * spacing[2],
        ]);
        let patient_to_index = index_to_patient
            .try_inverse()
            .ok_or(VolumeError::Directions)?;
        Ok(Volume {
            dims,
            spacing,
            origin,
            directions,
            voxels,
            index_to_patient,
            patient_to_index,
        })
    }

    /// Axis-aligned volume whose voxels are produced by `f(i, j, k)`.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Vec3,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, VolumeError> {
        let mut voxels = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    voxels.push(f(i, j, k));
                }
            }
        }
        Volume::new(dims, spacing, origin, [Vec3::x(), Vec3::y(), Vec3::z()], voxels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    /// (row_dir, col_dir, slice_dir)
    pub fn directions(&self) -> [Vec3; 3] {
        self.directions
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    /// Resident size of the voxel buffer.
    pub fn byte_size(&self) -> usize {
        self.voxels.len() * std::mem::size_of::<f32>()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.voxels[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Voxels of native slice `k`, row-major (x fastest).
    pub fn slice(&self, k: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1];
        &self.voxels[k * n..(k + 1) * n]
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn ijk_to_patient(&self, ijk: Vec3) -> Vec3 {
        self.origin + self.index_to_patient * ijk
    }

    pub fn patient_to_ijk(&self, p: Vec3) -> Vec3 {
        self.patient_to_index * (p - self.origin)
    }

    /// Linear part of the patient→index map, for transforming directions.
    pub fn patient_to_index_linear(&self) -> &Matrix3<f64> {
        &self.patient_to_index
    }

    /// Physical-space bounding box of the voxel centres as index-space box
    /// `[0, dim-1]` on each axis.
    pub fn index_extent(&self) -> Vec3 {
        Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        )
    }

    /// Trilinear sample at patient position `p`, or `fill` when `p` lies
    /// outside the voxel-centre box.
    pub fn sample_trilinear(&self, p: Vec3, fill: f64) -> f64 {
        self.sample_index(self.patient_to_ijk(p), fill)
    }

    /// Trilinear sample at a continuous index.
    pub fn sample_index(&self, idx: Vec3, fill: f64) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let mut x = idx[a];
            let nearest = x.round();
            if (x - nearest).abs() <= NODE_SNAP {
                x = nearest;
            }
            let last = (self.dims[a] - 1) as f64;
            if !(0.0..=last).contains(&x) {
                return fill;
            }
            if self.dims[a] == 1 {
                continue;
            }
            let i0 = (x.floor() as usize).min(self.dims[a] - 2);
            base[a] = i0;
            frac[a] = x - i0 as f64;
        }
        let step = [
            usize::from(self.dims[0] > 1),
            self.dims[0] * usize::from(self.dims[1] > 1),
            self.dims[0] * self.dims[1] * usize::from(self.dims[2] > 1),
        ];
        let at = |di: usize, dj: usize, dk: usize| {
            let offset = base[0] + self.dims[0] * (base[1] + self.dims[1] * base[2]);
            self.voxels[offset + di * step[0] + dj * step[1] + dk * step[2]] as f64
        };
        let lerp = |a: f64, b: f64, t: f64| (1.0 - t) * a + t * b;
        let [fx, fy, fz] = frac;
        let c00 = lerp(at(0, 0, 0), at(1, 0, 0), fx);
        let c10 = lerp(at(0, 1, 0), at(1, 1, 0), fx);
        let c01 = lerp(at(0, 0, 1), at(1, 0, 1), fx);
        let c11 = lerp(at(0, 1, 1), at(1, 1, 1), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }
}

/// Display window: linear mapping from physical values to 8-bit grey.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub center: f64,
    pub width: f64,
}

impl WindowSpec {
    pub fn new(center: f64, width: f64) -> Result<Self, VolumeError> {
        let w = WindowSpec { center, width };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if !(self.width > 1.0 && self.center.is_finite() && self.width.is_finite()) {
            return Err(VolumeError::WindowWidth(self.width));
        }
        Ok(())
    }
}

/// Linear VOI function: `round(255 · clamp((v − (c − 0.5)) / (w − 1) + 0.5, 0, 1))`.
pub fn apply_window(value: f64, w: &WindowSpec) -> u8 {
    let t = ((value - (w.center - 0.5)) / (w.width - 1.0) + 0.5).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rotation(ax: f64, ay: f64, az: f64) -> [Vec3; 3] {
        let r = nalgebra::Rotation3::from_euler_angles(ax, ay, az);
        [r * Vec3::x(), r * Vec3::y(), r * Vec3::z()]
    }

    fn gradient_x() -> Volume {
        Volume::from_fn([8, 4, 3], [1.0, 1.0, 1.0], Vec3::zeros(), |i, _, _| i as f32).unwrap()
    }

    #[test]
    fn origin_is_fixed_point() {
        let v = Volume::new(
            [2, 2, 2],
            [0.5, 0.7, 2.0],
            Vec3::new(-10.0, 4.0, 3.5),
            rotation(0.3, -0.2, 1.1),
            vec![0.0; 8],
        )
        .unwrap();
        assert_eq!(v.ijk_to_patient(Vec3::zeros()), v.origin());
    }

    #[test]
    fn identity_mapping() {
        let v = Volume::from_fn([8, 8, 8], [1.0; 3], Vec3::zeros(), |_, _, _| 0.0).unwrap();
        assert_eq!(v.ijk_to_patient(Vec3::new(3.0, 4.0, 5.0)), Vec3::new(3.0, 4.0, 5.0));
    }

    #[test]
    fn rejects_bad_construction() {
        let dirs = [Vec3::x(), Vec3::y(), Vec3::z()];
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0; 3], Vec3::zeros(), dirs, vec![0.0; 7]),
            Err(VolumeError::VoxelCount { .. })
        ));
        assert_eq!(
            Volume::new([2, 2, 2], [1.0, 0.0, 1.0], Vec3::zeros(), dirs, vec![0.0; 8]),
            Err(VolumeError::Spacing([1.0, 0.0, 1.0]))
        );
        let skew = [Vec3::x(), Vec3::new(0.1, 1.0, 0.0).normalize(), Vec3::z()];
        assert_eq!(
            Volume::new([2, 2, 2], [1.0; 3], Vec3::zeros(), skew, vec![0.0; 8]),
            Err(VolumeError::Directions)
        );
    }

    #[test]
    fn sampling_reproduces_nodes() {
        let v = Volume::from_fn([5, 4, 3], [0.5, 0.75, 2.0], Vec3::new(1.0, 2.0, 3.0), |i, j, k| {
            (i * 100 + j * 10 + k) as f32 * 1.37
        })
        .unwrap();
        for k in 0..3 {
            for j in 0..4 {
                for i in 0..5 {
                    let p = v.ijk_to_patient(Vec3::new(i as f64, j as f64, k as f64));
                    assert_eq!(v.sample_trilinear(p, f64::NAN), v.get(i, j, k) as f64);
                }
            }
        }
    }

    #[test]
    fn constant_volume_samples_constant() {
        let v = Volume::from_fn([4, 4, 4], [1.0; 3], Vec3::zeros(), |_, _, _| 42.5).unwrap();
        for p in [Vec3::new(0.3, 2.9, 1.1), Vec3::new(3.0, 3.0, 3.0), Vec3::new(1.5, 0.0, 2.25)] {
            assert_eq!(v.sample_trilinear(p, 0.0), 42.5);
        }
    }

    #[test]
    fn gradient_is_exact_between_nodes() {
        // f(x,y,z) = x, unit spacing: trilinear is exact on linear fields
        let v = gradient_x();
        assert_eq!(v.sample_trilinear(Vec3::new(2.5, 0.0, 0.0), -1.0), 2.5);
    }

    #[test]
    fn outside_returns_fill() {
        let v = gradient_x();
        assert_eq!(v.sample_trilinear(Vec3::new(-0.01, 0.0, 0.0), -7.0), -7.0);
        assert_eq!(v.sample_trilinear(Vec3::new(7.01, 0.0, 0.0), -7.0), -7.0);
        assert_eq!(v.sample_trilinear(Vec3::new(7.0, 3.0, 2.0), -7.0), 7.0);
    }

    #[test]
    fn single_slice_axis_samples_only_on_plane() {
        let v = Volume::from_fn([3, 3, 1], [1.0; 3], Vec3::zeros(), |i, j, _| (i + j) as f32).unwrap();
        assert_eq!(v.sample_trilinear(Vec3::new(1.5, 0.5, 0.0), 0.0), 2.0);
        assert_eq!(v.sample_trilinear(Vec3::new(1.5, 0.5, 0.1), -1.0), -1.0);
    }

    #[test]
    fn window_examples() {
        let w = WindowSpec::new(40.0, 400.0).unwrap();
        assert_eq!(apply_window(40.0, &w), 128);
        assert_eq!(apply_window(40.0 - 200.0, &w), 0);
        assert_eq!(apply_window(-5000.0, &w), 0);
        assert_eq!(apply_window(40.0 + 200.0, &w), 255);
        assert_eq!(apply_window(5000.0, &w), 255);
        assert!(WindowSpec::new(40.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn patient_index_round_trip(
            ax in -3.2f64..3.2, ay in -1.5f64..1.5, az in -3.2f64..3.2,
            sx in 0.2f64..3.0, sy in 0.2f64..3.0, sz in 0.2f64..5.0,
            ox in -200f64..200.0, oy in -200f64..200.0, oz in -200f64..200.0,
            i in -50f64..600.0, j in -50f64..600.0, k in -50f64..600.0,
        ) {
            let v = Volume::new([2, 2, 2], [sx, sy, sz], Vec3::new(ox, oy, oz), rotation(ax, ay, az), vec![0.0; 8]).unwrap();
            let ijk = Vec3::new(i, j, k);
            let back = v.patient_to_ijk(v.ijk_to_patient(ijk));
            prop_assert!((back - ijk).amax() <= 1e-9, "{:?} vs {:?}", back, ijk);
        }

        #[test]
        fn trilinear_exact_on_affine_fields(
            a in -100f64..100.0, b in -5f64..5.0, c in -5f64..5.0, d in -5f64..5.0,
            x in 0f64..7.0, y in 0f64..4.5, z in 0f64..4.0,
        ) {
            let spacing = [1.0, 1.5, 2.0];
            let f = |p: Vec3| a + b * p.x + c * p.y + d * p.z;
            let v = Volume::from_fn([8, 4, 3], spacing, Vec3::zeros(), |i, j, k| {
                f(Vec3::new(i as f64 * spacing[0], j as f64 * spacing[1], k as f64 * spacing[2])) as f32
            }).unwrap();
            let p = Vec3::new(x, y, z);
            // nodes are stored as f32, hence the value-scaled tolerance
            let got = v.sample_trilinear(p, f64::NAN);
            let tol = 1e-6 + 1e-6 * (a.abs() + 10.0 * (b.abs() + c.abs() + d.abs()));
            prop_assert!((got - f(p)).abs() <= tol, "{} vs {}", got, f(p));
        }

        #[test]
        fn sampling_is_lipschitz(
            seed in 0u64..1000, x in 0.1f64..6.9, y in 0.1f64..2.9, z in 0.1f64..2.9,
            dx in -1f64..1.0, dy in -1f64..1.0, dz in -1f64..1.0,
        ) {
            let mut state = seed;
            let v = Volume::from_fn([8, 4, 4], [1.0; 3], Vec3::zeros(), |_, _, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 40) % 2000) as f32 - 1000.0
            }).unwrap();
            let eps = 1e-6;
            let p = Vec3::new(x, y, z);
            let q = p + Vec3::new(dx, dy, dz).normalize() * eps;
            let (lo, hi) = v.value_range();
            // each partial derivative is bounded by the voxel range
            let bound = 3f64.sqrt() * (hi - lo) as f64 * eps;
            prop_assert!((v.sample_trilinear(p, 0.0) - v.sample_trilinear(q, 0.0)).abs() <= bound + 1e-12);
        }

        #[test]
        fn window_is_monotone(c in -2000f64..2000.0, w in 1.5f64..5000.0, a in -5000f64..5000.0, b in -5000f64..5000.0) {
            let spec = WindowSpec::new(c, w).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(apply_window(lo, &spec) <= apply_window(hi, &spec));
        }
    }
}
