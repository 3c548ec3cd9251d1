//! Core of the mivs medical imaging server: DICOM ingestion, the volume
//! model, reconstructions, annotations and the synchronized study catalog.

pub mod annotation;
pub mod dicom;
pub mod phantom;
pub mod recon;
pub mod render;
pub mod sync;
pub mod volume;

/// 3-vector in patient (mm) or index space.
pub type Vec3 = nalgebra::Vector3<f64>;
