//! Image annotations: typed geometry in voxel-index coordinates, optimistic
//! CRUD through the catalog store, and seeded region-grow refinement.
//!
//! JSON form of an [`Annotation`]:
//!
//! ```json
//! {"id": "…uuid…", "series_uid": "1.2.3", "slice_index": 12,
//!  "kind": "rectangle", "geometry": {"x0": 1, "y0": 2, "x1": 10, "y1": 8},
//!  "label": "lesion", "author": "alice", "version": 1,
//!  "created_at": "2024-01-01T00:00:00Z", "updated_at": "2024-01-01T00:00:00Z"}
//! ```
//!
//! `slice_index` is −1 for a 3D point, whose geometry then carries `z`.

mod crud;
mod refine;

pub use crud::{create, delete, get, list_by_series, update};
pub use refine::{
    douglas_peucker, is_simple, marching_squares, region_grow, semi_auto_refine, signed_area,
    Connectivity, RegionGrowParams, SliceView,
};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation {0} not found")]
    NotFound(String),
    #[error("unknown series {0}")]
    UnknownSeries(String),
    #[error("stale version {given}; current version is {current}")]
    StaleVersion { given: u64, current: u64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("seed value {value} lies outside [{low}, {high}]")]
    SeedOutOfBand { value: f64, low: f64, high: f64 },
    #[error("region exceeds {0} voxels")]
    RegionCapExceeded(usize),
    #[error("invalid region-grow parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Store(#[from] crate::sync::StoreError),
}

/// Kind-specific coordinates, in voxel index units of the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "geometry", rename_all = "lowercase")]
pub enum Shape {
    Point {
        x: f64,
        y: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<f64>,
    },
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, #[serde(default)] angle: f64 },
    Polygon { points: Vec<[f64; 2]> },
    Freehand { points: Vec<[f64; 2]> },
}

impl Shape {
    pub fn kind(&self) -> &'static str {
        match self {
            Shape::Point { .. } => "point",
            Shape::Rectangle { .. } => "rectangle",
            Shape::Circle { .. } => "circle",
            Shape::Ellipse { .. } => "ellipse",
            Shape::Polygon { .. } => "polygon",
            Shape::Freehand { .. } => "freehand",
        }
    }

    fn coordinates(&self) -> Vec<f64> {
        match self {
            Shape::Point { x, y, z } => [*x, *y].into_iter().chain(*z).collect(),
            Shape::Rectangle { x0, y0, x1, y1 } => vec![*x0, *y0, *x1, *y1],
            Shape::Circle { cx, cy, r } => vec![*cx, *cy, *r],
            Shape::Ellipse { cx, cy, rx, ry, angle } => vec![*cx, *cy, *rx, *ry, *angle],
            Shape::Polygon { points } | Shape::Freehand { points } => points.iter().flatten().copied().collect(),
        }
    }

    pub fn validate(&self, slice_index: i64) -> Result<(), AnnotationError> {
        let bad = |m: &str| Err(AnnotationError::InvalidGeometry(m.to_string()));
        if !self.coordinates().iter().all(|c| c.is_finite()) {
            return bad("coordinates must be finite");
        }
        if slice_index < -1 {
            return bad("slice_index must be >= -1");
        }
        match self {
            Shape::Point { z, .. } => {
                if (slice_index == -1) != z.is_some() {
                    return bad("a 3D point (slice_index -1) needs z; a 2D point must not have one");
                }
            }
            _ if slice_index == -1 => return bad("only points may be 3D"),
            Shape::Rectangle { x0, y0, x1, y1 } => {
                if (x1 - x0) * (y1 - y0) == 0.0 {
                    return bad("rectangle must have positive area");
                }
            }
            Shape::Circle { r, .. } => {
                if *r <= 0.0 {
                    return bad("circle radius must be positive");
                }
            }
            Shape::Ellipse { rx, ry, .. } => {
                if *rx <= 0.0 || *ry <= 0.0 {
                    return bad("ellipse semi-axes must be positive");
                }
            }
            Shape::Polygon { points } | Shape::Freehand { points } => {
                if points.len() < 3 {
                    return bad("polygons need at least 3 vertices");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub series_uid: String,
    pub slice_index: i64,
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub label: String,
    pub author: String,
    pub version: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// Client-supplied fields of a create or update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDraft {
    pub slice_index: i64,
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub label: String,
}

impl AnnotationDraft {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        self.shape.validate(self.slice_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_layout() {
        let draft: AnnotationDraft = serde_json::from_str(
            r#"{"slice_index": 3, "kind": "circle", "geometry": {"cx": 1, "cy": 2, "r": 4}, "label": "x"}"#,
        )
        .unwrap();
        assert_eq!(draft.shape, Shape::Circle { cx: 1.0, cy: 2.0, r: 4.0 });
        let back = serde_json::to_value(&draft).unwrap();
        assert_eq!(back["kind"], "circle");
        assert_eq!(back["geometry"]["r"], 4.0);
    }

    #[test]
    fn geometry_invariants() {
        let tri = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(Shape::Polygon { points: tri.clone() }.validate(0).is_ok());
        assert!(Shape::Freehand { points: tri[..2].to_vec() }.validate(0).is_err());
        assert!(Shape::Circle { cx: 0.0, cy: 0.0, r: 0.0 }.validate(0).is_err());
        assert!(Shape::Ellipse { cx: 0.0, cy: 0.0, rx: 1.0, ry: -1.0, angle: 0.0 }.validate(0).is_err());
        assert!(Shape::Rectangle { x0: 1.0, y0: 0.0, x1: 1.0, y1: 5.0 }.validate(0).is_err());
        assert!(Shape::Point { x: 1.0, y: 1.0, z: Some(2.0) }.validate(-1).is_ok());
        assert!(Shape::Point { x: 1.0, y: 1.0, z: None }.validate(-1).is_err());
        assert!(Shape::Circle { cx: 0.0, cy: 0.0, r: 1.0 }.validate(-1).is_err());
        assert!(Shape::Point { x: f64::NAN, y: 1.0, z: None }.validate(0).is_err());
    }
}
