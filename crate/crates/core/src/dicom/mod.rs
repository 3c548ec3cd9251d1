//! DICOM Part-10 reading and writing, slice geometry validation and series
//! assembly.
//!
//! Only uncompressed little-endian transfer syntaxes are handled. Sequences
//! are carried as opaque bytes.

mod dictionary;
mod element;
mod geometry;
mod parse;
mod series;
mod write;

pub use element::{DataSet, Element, Tag, Value, Vr};
pub use geometry::{decode_pixels, validate_slice, SliceGeometry};
pub use parse::parse_file;
pub use series::assemble_series;
pub use write::{write_file, write_file_with, WriteOptions};

use thiserror::Error;

pub const IMPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";
pub const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";
pub const IMPLEMENTATION_CLASS_UID: &str = "1.2.826.0.1.3680043.10.1121.1";
pub const IMPLEMENTATION_VERSION: &str = "MIVS_010";

/// Well-known attribute tags used by the pipeline.
pub mod tags {
    use super::Tag;

    pub const META_GROUP_LENGTH: Tag = Tag::new(0x0002, 0x0000);
    pub const META_VERSION: Tag = Tag::new(0x0002, 0x0001);
    pub const MEDIA_STORAGE_SOP_CLASS_UID: Tag = Tag::new(0x0002, 0x0002);
    pub const MEDIA_STORAGE_SOP_INSTANCE_UID: Tag = Tag::new(0x0002, 0x0003);
    pub const TRANSFER_SYNTAX_UID: Tag = Tag::new(0x0002, 0x0010);
    pub const IMPLEMENTATION_CLASS_UID: Tag = Tag::new(0x0002, 0x0012);
    pub const IMPLEMENTATION_VERSION_NAME: Tag = Tag::new(0x0002, 0x0013);

    pub const SOP_CLASS_UID: Tag = Tag::new(0x0008, 0x0016);
    pub const SOP_INSTANCE_UID: Tag = Tag::new(0x0008, 0x0018);
    pub const STUDY_DATE: Tag = Tag::new(0x0008, 0x0020);
    pub const STUDY_TIME: Tag = Tag::new(0x0008, 0x0030);
    pub const MODALITY: Tag = Tag::new(0x0008, 0x0060);
    pub const STUDY_DESCRIPTION: Tag = Tag::new(0x0008, 0x1030);
    pub const SERIES_DESCRIPTION: Tag = Tag::new(0x0008, 0x103E);
    pub const PATIENT_NAME: Tag = Tag::new(0x0010, 0x0010);
    pub const PATIENT_ID: Tag = Tag::new(0x0010, 0x0020);
    pub const SLICE_THICKNESS: Tag = Tag::new(0x0018, 0x0050);
    pub const STUDY_INSTANCE_UID: Tag = Tag::new(0x0020, 0x000D);
    pub const SERIES_INSTANCE_UID: Tag = Tag::new(0x0020, 0x000E);
    pub const SERIES_NUMBER: Tag = Tag::new(0x0020, 0x0011);
    pub const INSTANCE_NUMBER: Tag = Tag::new(0x0020, 0x0013);
    pub const IMAGE_POSITION_PATIENT: Tag = Tag::new(0x0020, 0x0032);
    pub const IMAGE_ORIENTATION_PATIENT: Tag = Tag::new(0x0020, 0x0037);
    pub const FRAME_OF_REFERENCE_UID: Tag = Tag::new(0x0020, 0x0052);
    pub const SAMPLES_PER_PIXEL: Tag = Tag::new(0x0028, 0x0002);
    pub const PHOTOMETRIC_INTERPRETATION: Tag = Tag::new(0x0028, 0x0004);
    pub const NUMBER_OF_FRAMES: Tag = Tag::new(0x0028, 0x0008);
    pub const ROWS: Tag = Tag::new(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag::new(0x0028, 0x0011);
    pub const PIXEL_SPACING: Tag = Tag::new(0x0028, 0x0030);
    pub const BITS_ALLOCATED: Tag = Tag::new(0x0028, 0x0100);
    pub const BITS_STORED: Tag = Tag::new(0x0028, 0x0101);
    pub const HIGH_BIT: Tag = Tag::new(0x0028, 0x0102);
    pub const PIXEL_REPRESENTATION: Tag = Tag::new(0x0028, 0x0103);
    pub const WINDOW_CENTER: Tag = Tag::new(0x0028, 0x1050);
    pub const WINDOW_WIDTH: Tag = Tag::new(0x0028, 0x1051);
    pub const RESCALE_INTERCEPT: Tag = Tag::new(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag::new(0x0028, 0x1053);
    pub const PIXEL_DATA: Tag = Tag::new(0x7FE0, 0x0010);

    pub const ITEM: Tag = Tag::new(0xFFFE, 0xE000);
    pub const ITEM_DELIMITATION: Tag = Tag::new(0xFFFE, 0xE00D);
    pub const SEQUENCE_DELIMITATION: Tag = Tag::new(0xFFFE, 0xE0DD);
}

/// Identifiers every stored instance must carry.
pub const REQUIRED_IDENTIFIERS: [Tag; 5] = [
    tags::SOP_INSTANCE_UID,
    tags::SERIES_INSTANCE_UID,
    tags::STUDY_INSTANCE_UID,
    tags::PATIENT_ID,
    tags::MODALITY,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DicomError {
    #[error("missing DICM magic at offset 128")]
    MissingMagic,
    #[error("truncated at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: u64,
        available: usize,
    },
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("file meta group has no transfer syntax")]
    MissingTransferSyntax,
    #[error("malformed VR {code:?} at offset {offset}")]
    MalformedVR { offset: usize, code: String },
    #[error("malformed value for {tag}: {reason}")]
    MalformedValue { tag: Tag, reason: String },
    #[error("element {found} follows {previous}; tags must be strictly increasing")]
    TagOrder { previous: Tag, found: Tag },
    #[error("unsupported VR {0} for writing")]
    UnsupportedVR(String),
    #[error("missing attribute {0}")]
    MissingAttribute(Tag),
    #[error("image orientation is not orthonormal: |row|={row_norm}, |col|={col_norm}, row.col={dot}")]
    NonOrthonormalOrientation {
        row_norm: f64,
        col_norm: f64,
        dot: f64,
    },
    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),
    #[error("slices do not form a single series: {0}")]
    MixedSeries(String),
    #[error("non-uniform slice spacing: gaps range {min_gap}..{max_gap} mm")]
    NonUniformSpacing { min_gap: f64, max_gap: f64 },
    #[error("a volume needs at least 2 slices, got {0}")]
    SingleSlice(usize),
    #[error("two slices share position {0} mm along the slice normal")]
    DuplicatePosition(f64),
}

impl DicomError {
    /// Short stable name of the error kind, used in event logs and API bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            DicomError::MissingMagic => "MissingMagic",
            DicomError::Truncated { .. } => "Truncated",
            DicomError::UnsupportedTransferSyntax(_) => "UnsupportedTransferSyntax",
            DicomError::MissingTransferSyntax => "MissingTransferSyntax",
            DicomError::MalformedVR { .. } => "MalformedVR",
            DicomError::MalformedValue { .. } => "MalformedValue",
            DicomError::TagOrder { .. } => "TagOrder",
            DicomError::UnsupportedVR(_) => "UnsupportedVR",
            DicomError::MissingAttribute(_) => "MissingAttribute",
            DicomError::NonOrthonormalOrientation { .. } => "NonOrthonormalOrientation",
            DicomError::UnsupportedPixelFormat(_) => "UnsupportedPixelFormat",
            DicomError::MixedSeries(_) => "MixedSeries",
            DicomError::NonUniformSpacing { .. } => "NonUniformSpacing",
            DicomError::SingleSlice(_) => "SingleSlice",
            DicomError::DuplicatePosition(_) => "DuplicatePosition",
        }
    }
}
