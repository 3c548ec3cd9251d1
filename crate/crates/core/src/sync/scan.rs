use std::collections::BTreeSet;
use std::path::Path;
use std::time::UNIX_EPOCH;

use chrono::NaiveDate;
use rayon::prelude::*;
use walkdir::WalkDir;

use super::{Catalog, Event, FileStamp, InstanceMeta, SourceConfig, SyncError};
use crate::dicom::{self, tags, DicomError};

/// Reads the catalog attributes of one DICOM file. The file must carry the
/// required identifiers and valid slice geometry.
pub fn read_instance(bytes: &[u8]) -> Result<InstanceMeta, DicomError> {
    let ds = dicom::parse_file(bytes)?;
    ds.validate_identifiers()?;
    dicom::validate_slice(&ds)?;
    let text = |tag| ds.string(tag).unwrap_or_default().to_string();
    Ok(InstanceMeta {
        patient_id: text(tags::PATIENT_ID),
        patient_name: text(tags::PATIENT_NAME),
        study_uid: text(tags::STUDY_INSTANCE_UID),
        study_date: ds
            .string(tags::STUDY_DATE)
            .and_then(|d| NaiveDate::parse_from_str(d, "%Y%m%d").ok()),
        modality: text(tags::MODALITY),
        series_uid: text(tags::SERIES_INSTANCE_UID),
        series_description: text(tags::SERIES_DESCRIPTION),
        sop_uid: text(tags::SOP_INSTANCE_UID),
    })
}

fn stamp(meta: &std::fs::Metadata) -> FileStamp {
    let mtime_ns = meta
        .modified()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map_or(0, |d| d.as_nanos() as i64);
    FileStamp {
        size: meta.len(),
        mtime_ns,
    }
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

/// Walks a source root and returns the events that bring `catalog` up to
/// date with it: new or changed files are parsed (Added or Rejected), files
/// that disappeared are Removed. Unchanged files, identified by path, size
/// and mtime, are skipped, so an immediate rescan yields nothing.
///
/// Dot-files are ignored, which lets writers drop files atomically by
/// renaming from a hidden temporary name.
pub fn scan_source(cfg: &SourceConfig, catalog: &Catalog) -> Result<Vec<Event>, SyncError> {
    let unavailable = || SyncError::SourceUnavailable {
        source_id: cfg.source_id.clone(),
        path: cfg.root_path.clone(),
    };
    if !cfg.root_path.is_dir() {
        return Err(unavailable());
    }
    let root = cfg.root_path.canonicalize().map_err(|_| unavailable())?;

    let mut seen = BTreeSet::new();
    let mut candidates = Vec::new();
    let walker = WalkDir::new(&root).sort_by_file_name().into_iter();
    for entry in walker.filter_entry(|e| e.depth() == 0 || !is_hidden(e.path())) {
        let Ok(entry) = entry else { continue };
        if !entry.file_type().is_file() {
            continue;
        }
        let Ok(meta) = entry.metadata() else { continue };
        let path = entry.path().to_string_lossy().into_owned();
        let st = stamp(&meta);
        seen.insert(path.clone());
        match catalog.file(&cfg.source_id, &path) {
            Some(rec) if rec.stamp == st => {}
            _ => candidates.push((path, st)),
        }
    }

    let parsed: Vec<Option<Event>> = candidates
        .into_par_iter()
        .map(|(path, stamp)| {
            let bytes = std::fs::read(&path).ok()?;
            Some(match read_instance(&bytes) {
                Ok(meta) => Event::InstanceAdded {
                    source_id: cfg.source_id.clone(),
                    center_label: cfg.center_label.clone(),
                    path,
                    stamp,
                    meta,
                },
                Err(e) => Event::FileRejected {
                    source_id: cfg.source_id.clone(),
                    path,
                    stamp,
                    error_kind: e.kind().to_string(),
                    message: e.to_string(),
                },
            })
        })
        .collect();
    let mut events: Vec<Event> = parsed.into_iter().flatten().collect();

    events.extend(
        catalog
            .files()
            .filter(|f| f.source_id == cfg.source_id && !seen.contains(&f.path))
            .map(|f| Event::InstanceRemoved {
                source_id: f.source_id.clone(),
                path: f.path.clone(),
            }),
    );
    Ok(events)
}
