use chrono::Utc;

use super::{Annotation, AnnotationDraft, AnnotationError};
use crate::sync::{Catalog, Event, Store};

fn require_series(c: &Catalog, series_uid: &str) -> Result<(), AnnotationError> {
    if c.primary_series(series_uid).is_none() {
        return Err(AnnotationError::UnknownSeries(series_uid.to_string()));
    }
    Ok(())
}

pub fn create(store: &Store, series_uid: &str, author: &str, draft: AnnotationDraft) -> Result<Annotation, AnnotationError> {
    draft.validate()?;
    store.transact(|c| {
        require_series(c, series_uid)?;
        let now = Utc::now();
        let a = Annotation {
            id: uuid::Uuid::new_v4().to_string(),
            series_uid: series_uid.to_string(),
            slice_index: draft.slice_index,
            shape: draft.shape,
            label: draft.label,
            author: author.to_string(),
            version: 1,
            created_at: now,
            updated_at: now,
        };
        Ok((vec![Event::AnnotationUpserted { annotation: a.clone() }], a))
    })
}

pub fn get(store: &Store, series_uid: &str, id: &str) -> Result<Annotation, AnnotationError> {
    store
        .snapshot()
        .annotation(id)
        .filter(|a| a.series_uid == series_uid)
        .cloned()
        .ok_or_else(|| AnnotationError::NotFound(id.to_string()))
}

/// Replaces the client fields of an annotation. `version` must be the
/// version the caller last read.
pub fn update(
    store: &Store,
    series_uid: &str,
    id: &str,
    version: u64,
    draft: AnnotationDraft,
) -> Result<Annotation, AnnotationError> {
    draft.validate()?;
    store.transact(|c| {
        let current = c
            .annotation(id)
            .filter(|a| a.series_uid == series_uid)
            .ok_or_else(|| AnnotationError::NotFound(id.to_string()))?;
        if current.version != version {
            return Err(AnnotationError::StaleVersion {
                given: version,
                current: current.version,
            });
        }
        let a = Annotation {
            slice_index: draft.slice_index,
            shape: draft.shape,
            label: draft.label,
            version: current.version + 1,
            updated_at: Utc::now().max(current.updated_at),
            ..current.clone()
        };
        Ok((vec![Event::AnnotationUpserted { annotation: a.clone() }], a))
    })
}

pub fn delete(store: &Store, series_uid: &str, id: &str) -> Result<(), AnnotationError> {
    store.transact(|c| {
        c.annotation(id)
            .filter(|a| a.series_uid == series_uid)
            .ok_or_else(|| AnnotationError::NotFound(id.to_string()))?;
        Ok((vec![Event::AnnotationDeleted { id: id.to_string() }], ()))
    })
}

/// Annotations of a series, optionally by one author, oldest first.
pub fn list_by_series(store: &Store, series_uid: &str, author: Option<&str>) -> Vec<Annotation> {
    let mut out: Vec<Annotation> = store
        .snapshot()
        .annotations()
        .filter(|a| a.series_uid == series_uid && author.is_none_or(|au| a.author == au))
        .cloned()
        .collect();
    out.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
    out
}
