use super::{decode_pixels, tags, DataSet, DicomError, SliceGeometry};
use crate::volume::Volume;

const GAP_TOLERANCE: f64 = 0.10;
const ORIENTATION_MATCH: f64 = 1e-4;
const DUPLICATE_GAP: f64 = 1e-6;

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn check_same_series(slices: &[(DataSet, SliceGeometry)]) -> Result<(), DicomError> {
    let (first_ds, first) = &slices[0];
    let series_uid = first_ds.require_string(tags::SERIES_INSTANCE_UID)?;
    for (ds, g) in &slices[1..] {
        let uid = ds.require_string(tags::SERIES_INSTANCE_UID)?;
        if uid != series_uid {
            return Err(DicomError::MixedSeries(format!(
                "SeriesInstanceUID {uid} differs from {series_uid}"
            )));
        }
        if (g.rows, g.cols) != (first.rows, first.cols) {
            return Err(DicomError::MixedSeries(format!(
                "matrix {}x{} differs from {}x{}",
                g.rows, g.cols, first.rows, first.cols
            )));
        }
        if (g.row_cosine - first.row_cosine).amax() > ORIENTATION_MATCH
            || (g.col_cosine - first.col_cosine).amax() > ORIENTATION_MATCH
        {
            return Err(DicomError::MixedSeries("orientation differs between slices".into()));
        }
        let spacing_differs = g
            .pixel_spacing
            .iter()
            .zip(first.pixel_spacing)
            .any(|(a, b)| (a - b).abs() > 1e-6 * b.abs().max(1.0));
        if spacing_differs {
            return Err(DicomError::MixedSeries("pixel spacing differs between slices".into()));
        }
    }
    Ok(())
}

/// Sorts same-series slices along their normal, checks that they are evenly
/// spaced and stacks them into a volume in physical units.
///
/// The result does not depend on the order of `slices`.
pub fn assemble_series(slices: &[(DataSet, SliceGeometry)]) -> Result<Volume, DicomError> {
    if slices.len() < 2 {
        return Err(DicomError::SingleSlice(slices.len()));
    }
    check_same_series(slices)?;

    let first = &slices[0].1;
    let normal = first.normal();
    let mut order: Vec<(f64, usize)> = slices
        .iter()
        .enumerate()
        .map(|(i, (_, g))| (g.position.dot(&normal), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let gaps: Vec<f64> = order.windows(2).map(|w| w[1].0 - w[0].0).collect();
    if let Some(i) = gaps.iter().position(|&g| g < DUPLICATE_GAP) {
        return Err(DicomError::DuplicatePosition(order[i].0));
    }
    let mut sorted_gaps = gaps.clone();
    sorted_gaps.sort_by(f64::total_cmp);
    let median_gap = median(&sorted_gaps);
    let (min_gap, max_gap) = (sorted_gaps[0], sorted_gaps[sorted_gaps.len() - 1]);
    if gaps
        .iter()
        .any(|g| (g - median_gap).abs() > GAP_TOLERANCE * median_gap)
    {
        return Err(DicomError::NonUniformSpacing { min_gap, max_gap });
    }

    let (rows, cols) = (first.rows, first.cols);
    let mut voxels = Vec::with_capacity(rows * cols * slices.len());
    for &(_, i) in &order {
        let (ds, g) = &slices[i];
        voxels.extend(decode_pixels(ds, g)?);
    }

    let origin = slices[order[0].1].1.position;
    Volume::new(
        [cols, rows, slices.len()],
        [first.pixel_spacing[1], first.pixel_spacing[0], median_gap],
        origin,
        [first.row_cosine, first.col_cosine, normal.normalize()],
        voxels,
    )
    .map_err(|e| DicomError::MixedSeries(e.to_string()))
}
