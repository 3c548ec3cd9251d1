//! Analytic test phantoms and their encoding as DICOM series.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::{self, tags, DataSet, DicomError, Element, Vr, EXPLICIT_VR_LITTLE_ENDIAN};
use crate::volume::Volume;
use crate::Vec3;

pub const MIN_EDGE: usize = 8;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dicom(#[from] DicomError),
}

/// Field definition. Coordinates are patient mm with the volume at the
/// origin and identity orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PhantomKind {
    /// f = coordinate along `axis` (0 = x, 1 = y, 2 = z), in mm.
    Gradient { axis: usize },
    Sphere { center: Vec3, radius: f64, value: f64 },
    /// Voxels within `radius` of the polyline through `points`.
    Tube { points: Vec<Vec3>, radius: f64, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default = "default_background")]
    pub background: f64,
}

fn default_background() -> f64 {
    -1000.0
}

/// Identifiers stamped on every slice of a written series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesIds {
    pub patient_id: String,
    pub patient_name: String,
    pub study_uid: String,
    pub series_uid: String,
    pub study_date: String,
    pub modality: String,
}

impl SeriesIds {
    pub fn random(patient_id: &str) -> Self {
        SeriesIds {
            patient_id: patient_id.to_string(),
            patient_name: format!("PHANTOM^{patient_id}"),
            study_uid: random_uid(),
            series_uid: random_uid(),
            study_date: "20240101".into(),
            modality: "CT".into(),
        }
    }
}

/// UID in the `2.25` arc derived from a random UUID.
pub fn random_uid() -> String {
    format!("2.25.{}", uuid::Uuid::new_v4().as_u128())
}

/// Helix around the vertical axis of a volume, one full turn between 15%
/// and 85% of its z extent.
pub fn helix_points(dims: [usize; 3], spacing: [f64; 3], n: usize) -> Vec<Vec3> {
    let ext: Vec<f64> = (0..3).map(|a| (dims[a] - 1) as f64 * spacing[a]).collect();
    let r = 0.25 * ext[0].min(ext[1]);
    let (z0, z1) = (0.15 * ext[2], 0.85 * ext[2]);
    (0..n)
        .map(|k| {
            let u = k as f64 / (n - 1) as f64;
            let a = std::f64::consts::TAU * u;
            Vec3::new(ext[0] / 2.0 + r * a.cos(), ext[1] / 2.0 + r * a.sin(), z0 + (z1 - z0) * u)
        })
        .collect()
}

fn distance_to_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

impl PhantomSpec {
    pub fn gradient(dims: [usize; 3], axis: usize) -> Self {
        PhantomSpec {
            kind: PhantomKind::Gradient { axis },
            dims,
            spacing: [1.0; 3],
            background: default_background(),
        }
    }

    pub fn sphere(dims: [usize; 3], radius: f64, value: f64) -> Self {
        let center = Vec3::new(
            (dims[0] - 1) as f64 / 2.0,
            (dims[1] - 1) as f64 / 2.0,
            (dims[2] - 1) as f64 / 2.0,
        );
        PhantomSpec {
            kind: PhantomKind::Sphere { center, radius, value },
            dims,
            spacing: [1.0; 3],
            background: default_background(),
        }
    }

    pub fn helical_tube(dims: [usize; 3], radius: f64, value: f64) -> Self {
        PhantomSpec {
            kind: PhantomKind::Tube {
                points: helix_points(dims, [1.0; 3], 200),
                radius,
                value,
            },
            dims,
            spacing: [1.0; 3],
            background: default_background(),
        }
    }

    fn extent(&self) -> Vec3 {
        Vec3::new(
            (self.dims[0] - 1) as f64 * self.spacing[0],
            (self.dims[1] - 1) as f64 * self.spacing[1],
            (self.dims[2] - 1) as f64 * self.spacing[2],
        )
    }

    fn inside(&self, p: &Vec3) -> bool {
        let e = self.extent();
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= e[a])
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        if self.dims.iter().any(|&d| d < MIN_EDGE) {
            return bad(format!("dims {:?} must be at least {MIN_EDGE} on every axis", self.dims));
        }
        if self.dims.iter().product::<usize>() > 1 << 28 {
            return bad(format!("dims {:?} too large", self.dims));
        }
        if !self.spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing));
        }
        let in_range = |v: f64| v.is_finite() && v.round() >= i16::MIN as f64 && v.round() <= i16::MAX as f64;
        if !in_range(self.background) {
            return bad("background does not fit 16-bit storage".into());
        }
        match &self.kind {
            PhantomKind::Gradient { axis } => {
                if *axis > 2 {
                    return bad(format!("gradient axis must be 0, 1 or 2, got {axis}"));
                }
                if !in_range(self.extent()[*axis]) {
                    return bad("gradient exceeds 16-bit storage".into());
                }
            }
            PhantomKind::Sphere { center, radius, value } => {
                if !self.inside(center) {
                    return bad("sphere centre lies outside the volume".into());
                }
                if !(radius.is_finite() && *radius > 0.0) || !in_range(*value) {
                    return bad("sphere radius must be positive and value fit 16 bits".into());
                }
            }
            PhantomKind::Tube { points, radius, value } => {
                if points.len() < 2 {
                    return bad("tube needs at least 2 control points".into());
                }
                if !points.iter().all(|p| self.inside(p)) {
                    return bad("tube control point lies outside the volume".into());
                }
                if points.windows(2).any(|w| w[0] == w[1]) {
                    return bad("tube control points must be distinct".into());
                }
                if !(radius.is_finite() && *radius > 0.0) || !in_range(*value) {
                    return bad("tube radius must be positive and value fit 16 bits".into());
                }
            }
        }
        Ok(())
    }

    /// Analytic value at patient point `p`.
    pub fn value_at(&self, p: &Vec3) -> f64 {
        match &self.kind {
            PhantomKind::Gradient { axis } => p[*axis],
            PhantomKind::Sphere { center, radius, value } => {
                if (p - center).norm() <= *radius {
                    *value
                } else {
                    self.background
                }
            }
            PhantomKind::Tube { points, radius, value } => {
                let near = points
                    .windows(2)
                    .any(|w| distance_to_segment(p, &w[0], &w[1]) <= *radius);
                if near {
                    *value
                } else {
                    self.background
                }
            }
        }
    }

    /// The field sampled at voxel centres, without storage quantization.
    pub fn volume(&self) -> Result<Volume, PhantomError> {
        self.validate()?;
        let s = self.spacing;
        let v = Volume::from_fn(self.dims, s, Vec3::zeros(), |i, j, k| {
            self.value_at(&Vec3::new(i as f64 * s[0], j as f64 * s[1], k as f64 * s[2])) as f32
        })
        .map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
        Ok(v)
    }

    /// One data set per axial slice: 16-bit signed, slope 1, intercept 0.
    pub fn datasets(&self, ids: &SeriesIds) -> Result<Vec<DataSet>, PhantomError> {
        let volume = self.volume()?;
        let [nx, ny, nz] = self.dims;
        let s = self.spacing;
        Ok((0..nz)
            .map(|k| {
                let mut ds = DataSet::new(EXPLICIT_VR_LITTLE_ENDIAN);
                let mut put = |e| {
                    ds.insert(e);
                };
                put(Element::string(tags::SOP_CLASS_UID, Vr::UI, dicom::CT_IMAGE_STORAGE));
                put(Element::string(tags::SOP_INSTANCE_UID, Vr::UI, format!("{}.{}", ids.series_uid, k + 1)));
                put(Element::string(tags::STUDY_DATE, Vr::DA, ids.study_date.clone()));
                put(Element::string(tags::MODALITY, Vr::CS, ids.modality.clone()));
                put(Element::string(tags::SERIES_DESCRIPTION, Vr::LO, "phantom"));
                put(Element::string(tags::PATIENT_NAME, Vr::PN, ids.patient_name.clone()));
                put(Element::string(tags::PATIENT_ID, Vr::LO, ids.patient_id.clone()));
                put(Element::decimals(tags::SLICE_THICKNESS, &[s[2]]));
                put(Element::string(tags::STUDY_INSTANCE_UID, Vr::UI, ids.study_uid.clone()));
                put(Element::string(tags::SERIES_INSTANCE_UID, Vr::UI, ids.series_uid.clone()));
                put(Element::string(tags::SERIES_NUMBER, Vr::IS, "1"));
                put(Element::string(tags::INSTANCE_NUMBER, Vr::IS, (k + 1).to_string()));
                put(Element::decimals(tags::IMAGE_POSITION_PATIENT, &[0.0, 0.0, k as f64 * s[2]]));
                put(Element::decimals(tags::IMAGE_ORIENTATION_PATIENT, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
                put(Element::u16(tags::SAMPLES_PER_PIXEL, 1));
                put(Element::string(tags::PHOTOMETRIC_INTERPRETATION, Vr::CS, "MONOCHROME2"));
                put(Element::u16(tags::ROWS, ny as u16));
                put(Element::u16(tags::COLUMNS, nx as u16));
                put(Element::decimals(tags::PIXEL_SPACING, &[s[1], s[0]]));
                put(Element::u16(tags::BITS_ALLOCATED, 16));
                put(Element::u16(tags::BITS_STORED, 16));
                put(Element::u16(tags::HIGH_BIT, 15));
                put(Element::u16(tags::PIXEL_REPRESENTATION, 1));
                put(Element::decimals(tags::RESCALE_INTERCEPT, &[0.0]));
                put(Element::decimals(tags::RESCALE_SLOPE, &[1.0]));
                let payload = volume
                    .slice(k)
                    .iter()
                    .flat_map(|&v| (v.round() as i16).to_le_bytes())
                    .collect();
                put(Element::bytes(tags::PIXEL_DATA, Vr::OW, payload));
                ds
            })
            .collect())
    }

    /// Writes the series as `slice_NNNN.dcm` files into `dir` (created if
    /// missing) and returns their paths in slice order.
    pub fn write_series(&self, dir: &Path, ids: &SeriesIds) -> Result<Vec<PathBuf>, PhantomError> {
        let datasets = self.datasets(ids)?;
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PhantomError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                let path = dir.join(format!("slice_{:04}.dcm", k + 1));
                std::fs::write(&path, dicom::write_file(ds)?).map_err(io(&path))?;
                Ok(path)
            })
            .collect()
    }
}
