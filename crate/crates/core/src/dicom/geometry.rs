use super::{tags, DataSet, DicomError, Value};
use crate::Vec3;

const ORTHONORMAL_TOLERANCE: f64 = 1e-4;

/// Geometry and rescale attributes of one cross-sectional slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGeometry {
    /// ImagePositionPatient: centre of the first transmitted pixel, mm.
    pub position: Vec3,
    /// Direction of increasing column index.
    pub row_cosine: Vec3,
    /// Direction of increasing row index.
    pub col_cosine: Vec3,
    /// PixelSpacing as stored: (between rows, between columns) in mm.
    pub pixel_spacing: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
}

impl SliceGeometry {
    pub fn normal(&self) -> Vec3 {
        self.row_cosine.cross(&self.col_cosine)
    }
}

fn exact_count(tag: super::Tag, values: Vec<f64>, n: usize) -> Result<Vec<f64>, DicomError> {
    if values.len() != n || values.iter().any(|v| !v.is_finite()) {
        return Err(DicomError::MalformedValue {
            tag,
            reason: format!("expected {n} finite values, got {values:?}"),
        });
    }
    Ok(values)
}

/// Extracts and checks the geometry attributes of a parsed slice.
pub fn validate_slice(ds: &DataSet) -> Result<SliceGeometry, DicomError> {
    let position = exact_count(
        tags::IMAGE_POSITION_PATIENT,
        ds.require_f64s(tags::IMAGE_POSITION_PATIENT)?,
        3,
    )?;
    let orientation = exact_count(
        tags::IMAGE_ORIENTATION_PATIENT,
        ds.require_f64s(tags::IMAGE_ORIENTATION_PATIENT)?,
        6,
    )?;
    let spacing = exact_count(tags::PIXEL_SPACING, ds.require_f64s(tags::PIXEL_SPACING)?, 2)?;
    if spacing.iter().any(|&s| s <= 0.0) {
        return Err(DicomError::MalformedValue {
            tag: tags::PIXEL_SPACING,
            reason: "spacing must be positive".into(),
        });
    }
    let rows = ds.require_u16(tags::ROWS)? as usize;
    let cols = ds.require_u16(tags::COLUMNS)? as usize;
    if rows == 0 || cols == 0 {
        return Err(DicomError::MalformedValue {
            tag: if rows == 0 { tags::ROWS } else { tags::COLUMNS },
            reason: "image must not be empty".into(),
        });
    }
    // Multi-frame objects are not slices of a volume.
    if let Some(frames) = ds.optional_f64(tags::NUMBER_OF_FRAMES)? {
        if frames > 1.0 {
            return Err(DicomError::UnsupportedPixelFormat(format!("{frames} frames")));
        }
    }

    let row_cosine = Vec3::new(orientation[0], orientation[1], orientation[2]);
    let col_cosine = Vec3::new(orientation[3], orientation[4], orientation[5]);
    let (row_norm, col_norm, dot) = (row_cosine.norm(), col_cosine.norm(), row_cosine.dot(&col_cosine));
    if (row_norm - 1.0).abs() > ORTHONORMAL_TOLERANCE
        || (col_norm - 1.0).abs() > ORTHONORMAL_TOLERANCE
        || dot.abs() > ORTHONORMAL_TOLERANCE
    {
        return Err(DicomError::NonOrthonormalOrientation {
            row_norm,
            col_norm,
            dot,
        });
    }

    Ok(SliceGeometry {
        position: Vec3::new(position[0], position[1], position[2]),
        row_cosine,
        col_cosine,
        pixel_spacing: [spacing[0], spacing[1]],
        rows,
        cols,
        rescale_slope: ds.optional_f64(tags::RESCALE_SLOPE)?.unwrap_or(1.0),
        rescale_intercept: ds.optional_f64(tags::RESCALE_INTERCEPT)?.unwrap_or(0.0),
    })
}

/// Decodes the pixel payload of a monochrome slice into physical units
/// (stored value × slope + intercept), row-major. MONOCHROME1 data is
/// inverted so that larger output values are always brighter.
pub fn decode_pixels(ds: &DataSet, geometry: &SliceGeometry) -> Result<Vec<f32>, DicomError> {
    let unsupported = |what: String| DicomError::UnsupportedPixelFormat(what);
    if let Some(spp) = ds.optional_u16(tags::SAMPLES_PER_PIXEL)? {
        if spp != 1 {
            return Err(unsupported(format!("{spp} samples per pixel")));
        }
    }
    let monochrome1 = match ds.string(tags::PHOTOMETRIC_INTERPRETATION) {
        None | Some("MONOCHROME2") => false,
        Some("MONOCHROME1") => true,
        Some(other) => return Err(unsupported(format!("photometric interpretation {other}"))),
    };
    let bits_allocated = ds.require_u16(tags::BITS_ALLOCATED)?;
    let bits_stored = ds.optional_u16(tags::BITS_STORED)?.unwrap_or(bits_allocated);
    let signed = ds.optional_u16(tags::PIXEL_REPRESENTATION)?.unwrap_or(0) == 1;
    if bits_stored == 0 || bits_stored > bits_allocated {
        return Err(unsupported(format!("{bits_stored} bits stored of {bits_allocated}")));
    }

    let payload = match ds.get(tags::PIXEL_DATA).map(|e| &e.value) {
        Some(Value::Bytes(b)) => b,
        Some(_) => {
            return Err(DicomError::MalformedValue {
                tag: tags::PIXEL_DATA,
                reason: "pixel data must be binary".into(),
            })
        }
        None => return Err(DicomError::MissingAttribute(tags::PIXEL_DATA)),
    };
    let n = geometry.rows * geometry.cols;
    let bytes_per_sample = match (bits_allocated, signed) {
        (8, false) => 1,
        (16, _) => 2,
        _ => {
            return Err(unsupported(format!(
                "{bits_allocated}-bit {} samples",
                if signed { "signed" } else { "unsigned" }
            )))
        }
    };
    if payload.len() < n * bytes_per_sample {
        return Err(DicomError::MalformedValue {
            tag: tags::PIXEL_DATA,
            reason: format!("{} bytes for {n} samples", payload.len()),
        });
    }

    // Stored values are masked/sign-extended to bits_stored.
    let stored: Vec<i64> = match bytes_per_sample {
        1 => payload[..n].iter().map(|&b| b as i64).collect(),
        _ => payload[..2 * n]
            .chunks_exact(2)
            .map(|c| {
                let raw = u16::from_le_bytes([c[0], c[1]]) as i64;
                let mask = (1i64 << bits_stored) - 1;
                let v = raw & mask;
                if signed && v >> (bits_stored - 1) & 1 == 1 {
                    v - (1i64 << bits_stored)
                } else {
                    v
                }
            })
            .collect(),
    };
    let (min_stored, max_stored) = if signed {
        (-(1i64 << (bits_stored - 1)), (1i64 << (bits_stored - 1)) - 1)
    } else {
        (0, (1i64 << bits_stored) - 1)
    };
    let (slope, intercept) = (geometry.rescale_slope, geometry.rescale_intercept);
    Ok(stored
        .into_iter()
        .map(|s| {
            let s = if monochrome1 { min_stored + max_stored - s } else { s };
            (s as f64 * slope + intercept) as f32
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicom::{Element, Vr, EXPLICIT_VR_LITTLE_ENDIAN};

    fn slice(orientation: &[f64]) -> DataSet {
        let mut ds = DataSet::new(EXPLICIT_VR_LITTLE_ENDIAN);
        ds.insert(Element::decimals(tags::IMAGE_POSITION_PATIENT, &[0.0, 0.0, 0.0]));
        ds.insert(Element::decimals(tags::IMAGE_ORIENTATION_PATIENT, orientation));
        ds.insert(Element::decimals(tags::PIXEL_SPACING, &[0.5, 0.7]));
        ds.insert(Element::u16(tags::ROWS, 2));
        ds.insert(Element::u16(tags::COLUMNS, 3));
        ds
    }

    #[test]
    fn axial_identity_orientation() {
        let g = validate_slice(&slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(g.row_cosine, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(g.col_cosine, Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(g.normal(), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!((g.rescale_slope, g.rescale_intercept), (1.0, 0.0));
        assert_eq!((g.rows, g.cols), (2, 3));
    }

    #[test]
    fn missing_pixel_spacing_names_the_tag() {
        let mut ds = slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        ds.remove(tags::PIXEL_SPACING);
        let err = validate_slice(&ds).unwrap_err();
        assert_eq!(err, DicomError::MissingAttribute(tags::PIXEL_SPACING));
        assert_eq!(err.to_string(), "missing attribute (0028,0030)");
    }

    #[test]
    fn multi_frame_is_rejected() {
        let mut ds = slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        ds.insert(Element::string(tags::NUMBER_OF_FRAMES, Vr::IS, "1"));
        assert!(validate_slice(&ds).is_ok());
        ds.insert(Element::string(tags::NUMBER_OF_FRAMES, Vr::IS, "12"));
        assert_eq!(validate_slice(&ds).unwrap_err().kind(), "UnsupportedPixelFormat");
    }

    #[test]
    fn stretched_cosines_are_rejected() {
        let err = validate_slice(&slice(&[1.01, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap_err();
        assert_eq!(err.kind(), "NonOrthonormalOrientation");
        let err = validate_slice(&slice(&[1.0, 0.0, 0.0, 0.01, 1.0, 0.0])).unwrap_err();
        assert_eq!(err.kind(), "NonOrthonormalOrientation");
        // jitter inside the tolerance passes
        validate_slice(&slice(&[1.00005, 0.0, 0.0, 0.0, 1.0, 0.00005])).unwrap();
    }

    fn with_pixels(bits: u16, signed: bool, photometric: &str, payload: Vec<u8>) -> DataSet {
        let mut ds = slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        ds.insert(Element::u16(tags::BITS_ALLOCATED, bits));
        ds.insert(Element::u16(tags::BITS_STORED, bits));
        ds.insert(Element::u16(tags::PIXEL_REPRESENTATION, signed as u16));
        ds.insert(Element::string(tags::PHOTOMETRIC_INTERPRETATION, Vr::CS, photometric));
        ds.insert(Element::bytes(tags::PIXEL_DATA, Vr::OW, payload));
        ds
    }

    #[test]
    fn rescale_is_applied() {
        let payload: Vec<u8> = [512u16, 0, 1, 2, 3, 4].iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut ds = with_pixels(16, false, "MONOCHROME2", payload);
        ds.insert(Element::decimals(tags::RESCALE_SLOPE, &[2.0]));
        ds.insert(Element::decimals(tags::RESCALE_INTERCEPT, &[-1024.0]));
        let g = validate_slice(&ds).unwrap();
        let px = decode_pixels(&ds, &g).unwrap();
        assert_eq!(px[0], 0.0);
        assert_eq!(px[1], -1024.0);
        assert_eq!(px[5], -1016.0);
    }

    #[test]
    fn signed_sixteen_bit() {
        let payload: Vec<u8> = [-1000i16, 400, 0, -1, 32767, -32768]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let ds = with_pixels(16, true, "MONOCHROME2", payload);
        let px = decode_pixels(&ds, &validate_slice(&ds).unwrap()).unwrap();
        assert_eq!(px, vec![-1000.0, 400.0, 0.0, -1.0, 32767.0, -32768.0]);
    }

    #[test]
    fn monochrome1_is_inverted() {
        let ds = with_pixels(8, false, "MONOCHROME1", vec![0, 255, 10, 20, 30, 40]);
        let px = decode_pixels(&ds, &validate_slice(&ds).unwrap()).unwrap();
        assert_eq!(px, vec![255.0, 0.0, 245.0, 235.0, 225.0, 215.0]);
    }

    #[test]
    fn color_is_unsupported() {
        let ds = with_pixels(8, false, "RGB", vec![0; 18]);
        let err = decode_pixels(&ds, &validate_slice(&ds).unwrap()).unwrap_err();
        assert_eq!(err.kind(), "UnsupportedPixelFormat");
    }
}
