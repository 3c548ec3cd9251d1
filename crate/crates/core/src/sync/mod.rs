//! Watched-directory synchronization into a durable study catalog, and
//! rule-based queries over it.

mod catalog;
mod poller;
mod query;
mod scan;
mod store;

pub use catalog::{
    Catalog, Event, FileRecord, FileStamp, FileState, InstanceMeta, SeriesEntry, SeriesRef, StudyRef,
};
pub use poller::Poller;
pub use query::{fetch_followups, list_series, query, sort_series, QueryRule};
pub use scan::{read_instance, scan_source};
pub use store::{encode_record, replay_log, LoadReport, SourceScan, Store, StoreError, LOG_FILE, SNAPSHOT_FILE};

use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::{self, DicomError};
use crate::volume::Volume;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("source {source_id} unavailable at {}", path.display())]
    SourceUnavailable { source_id: String, path: PathBuf },
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A watched directory standing in for a PACS node or a remote center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub source_id: String,
    pub root_path: PathBuf,
    #[serde(default = "default_poll")]
    pub poll_interval_secs: u64,
    #[serde(default)]
    pub center_label: String,
}

fn default_poll() -> u64 {
    5
}

impl SourceConfig {
    pub fn poll_interval(&self) -> Duration {
        Duration::from_secs(self.poll_interval_secs.max(1))
    }

    pub fn validate_all(sources: &[SourceConfig]) -> Result<(), SyncError> {
        let mut ids = std::collections::BTreeSet::new();
        for s in sources {
            if s.source_id.is_empty() {
                return Err(SyncError::InvalidSource("source_id must not be empty".into()));
            }
            if s.poll_interval_secs < 1 {
                return Err(SyncError::InvalidSource(format!("{}: poll_interval_secs must be >= 1", s.source_id)));
            }
            if !ids.insert(&s.source_id) {
                return Err(SyncError::InvalidSource(format!("duplicate source_id {}", s.source_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Dicom {
        path: String,
        #[source]
        source: DicomError,
    },
    #[error(transparent)]
    Assembly(#[from] DicomError),
}

/// Reads and assembles every instance of a catalogued series.
pub fn load_series_volume(entry: &SeriesEntry) -> Result<Volume, LoadError> {
    let slices = entry
        .instances
        .keys()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|path| {
            let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
                path: path.clone(),
                source,
            })?;
            let dicom_err = |source| LoadError::Dicom {
                path: path.clone(),
                source,
            };
            let ds = dicom::parse_file(&bytes).map_err(dicom_err)?;
            let g = dicom::validate_slice(&ds).map_err(dicom_err)?;
            Ok((ds, g))
        })
        .collect::<Result<Vec<_>, LoadError>>()?;
    Ok(dicom::assemble_series(&slices)?)
}
