use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::annotation::Annotation;

/// Key attributes of one indexed instance, as read from its header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub patient_id: String,
    #[serde(default)]
    pub patient_name: String,
    pub study_uid: String,
    pub study_date: Option<NaiveDate>,
    pub modality: String,
    pub series_uid: String,
    #[serde(default)]
    pub series_description: String,
    pub sop_uid: String,
}

/// On-disk identity of a watched file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStamp {
    pub size: u64,
    pub mtime_ns: i64,
}

/// Catalog mutation. Each one is a single log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Event {
    InstanceAdded {
        source_id: String,
        center_label: String,
        path: String,
        stamp: FileStamp,
        meta: InstanceMeta,
    },
    /// A file that failed to parse; remembered so it is not retried until
    /// its stamp changes.
    FileRejected {
        source_id: String,
        path: String,
        stamp: FileStamp,
        error_kind: String,
        message: String,
    },
    /// Forgets a file, indexed or rejected.
    InstanceRemoved { source_id: String, path: String },
    AnnotationUpserted { annotation: Annotation },
    AnnotationDeleted { id: String },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::InstanceAdded { .. } => "added",
            Event::FileRejected { .. } => "rejected",
            Event::InstanceRemoved { .. } => "removed",
            Event::AnnotationUpserted { .. } => "annotation_upserted",
            Event::AnnotationDeleted { .. } => "annotation_deleted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum FileState {
    Indexed { series_uid: String, sop_uid: String },
    Rejected { error_kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub source_id: String,
    pub path: String,
    pub stamp: FileStamp,
    #[serde(flatten)]
    pub state: FileState,
}

/// One series as seen from one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub source_id: String,
    pub center_label: String,
    pub patient_id: String,
    pub patient_name: String,
    pub study_uid: String,
    pub study_date: Option<NaiveDate>,
    pub modality: String,
    pub series_uid: String,
    pub series_description: String,
    /// path → SOPInstanceUID
    pub instances: BTreeMap<String, String>,
}

pub type SeriesKey = (String, String);
pub type FileKey = (String, String);

/// Patient → study → series → instance catalog plus annotations.
///
/// Series are keyed by (source_id, series_uid): the same series arriving
/// from two sources is kept twice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "CatalogRepr", into = "CatalogRepr")]
pub struct Catalog {
    revision: u64,
    series: BTreeMap<SeriesKey, SeriesEntry>,
    files: BTreeMap<FileKey, FileRecord>,
    annotations: BTreeMap<String, Annotation>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    revision: u64,
    series: Vec<SeriesEntry>,
    files: Vec<FileRecord>,
    annotations: Vec<Annotation>,
}

impl From<CatalogRepr> for Catalog {
    fn from(r: CatalogRepr) -> Self {
        Catalog {
            revision: r.revision,
            series: r
                .series
                .into_iter()
                .map(|s| ((s.source_id.clone(), s.series_uid.clone()), s))
                .collect(),
            files: r
                .files
                .into_iter()
                .map(|f| ((f.source_id.clone(), f.path.clone()), f))
                .collect(),
            annotations: r.annotations.into_iter().map(|a| (a.id.clone(), a)).collect(),
        }
    }
}

impl From<Catalog> for CatalogRepr {
    fn from(c: Catalog) -> Self {
        CatalogRepr {
            revision: c.revision,
            series: c.series.into_values().collect(),
            files: c.files.into_values().collect(),
            annotations: c.annotations.into_values().collect(),
        }
    }
}

/// Study as seen from one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRef {
    pub source_id: String,
    pub center_label: String,
    pub patient_id: String,
    pub study_uid: String,
    pub study_date: Option<NaiveDate>,
    pub modalities: Vec<String>,
    pub series_uids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesRef {
    pub source_id: String,
    pub center_label: String,
    pub patient_id: String,
    pub study_uid: String,
    pub study_date: Option<NaiveDate>,
    pub modality: String,
    pub series_uid: String,
    pub series_description: String,
    pub instance_count: usize,
}

impl From<&SeriesEntry> for SeriesRef {
    fn from(s: &SeriesEntry) -> Self {
        SeriesRef {
            source_id: s.source_id.clone(),
            center_label: s.center_label.clone(),
            patient_id: s.patient_id.clone(),
            study_uid: s.study_uid.clone(),
            study_date: s.study_date,
            modality: s.modality.clone(),
            series_uid: s.series_uid.clone(),
            series_description: s.series_description.clone(),
            instance_count: s.instances.len(),
        }
    }
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    /// Number of mutations applied since the empty catalog.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn series(&self) -> impl Iterator<Item = &SeriesEntry> {
        self.series.values()
    }

    pub fn series_count(&self) -> usize {
        self.series.len()
    }

    pub fn instance_count(&self) -> usize {
        self.series.values().map(|s| s.instances.len()).sum()
    }

    pub fn files(&self) -> impl Iterator<Item = &FileRecord> {
        self.files.values()
    }

    pub fn file(&self, source_id: &str, path: &str) -> Option<&FileRecord> {
        self.files.get(&(source_id.to_string(), path.to_string()))
    }

    /// All copies of a series, ordered by source_id.
    pub fn series_by_uid<'a>(&'a self, series_uid: &str) -> impl Iterator<Item = &'a SeriesEntry> + 'a {
        let series_uid = series_uid.to_string();
        self.series.values().filter(move |s| s.series_uid == series_uid)
    }

    /// The copy of a series served for rendering: the one from the lowest
    /// source_id.
    pub fn primary_series(&self, series_uid: &str) -> Option<&SeriesEntry> {
        self.series_by_uid(series_uid).next()
    }

    pub fn annotation(&self, id: &str) -> Option<&Annotation> {
        self.annotations.get(id)
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.values()
    }

    /// Studies grouped per (source_id, study_uid), in key order.
    pub fn studies(&self) -> Vec<StudyRef> {
        let mut map: BTreeMap<(String, String), StudyRef> = BTreeMap::new();
        for s in self.series.values() {
            let st = map
                .entry((s.source_id.clone(), s.study_uid.clone()))
                .or_insert_with(|| StudyRef {
                    source_id: s.source_id.clone(),
                    center_label: s.center_label.clone(),
                    patient_id: s.patient_id.clone(),
                    study_uid: s.study_uid.clone(),
                    study_date: s.study_date,
                    modalities: Vec::new(),
                    series_uids: Vec::new(),
                });
            if !st.modalities.contains(&s.modality) {
                st.modalities.push(s.modality.clone());
            }
            st.series_uids.push(s.series_uid.clone());
        }
        let mut out: Vec<StudyRef> = map.into_values().collect();
        for st in &mut out {
            st.modalities.sort();
        }
        out
    }

    fn remove_file(&mut self, source_id: &str, path: &str) {
        let key = (source_id.to_string(), path.to_string());
        if let Some(FileRecord {
            state: FileState::Indexed { series_uid, .. },
            ..
        }) = self.files.remove(&key)
        {
            let skey = (source_id.to_string(), series_uid);
            if let Some(series) = self.series.get_mut(&skey) {
                series.instances.remove(path);
                if series.instances.is_empty() {
                    self.series.remove(&skey);
                }
            }
        }
    }

    /// Applies one event and bumps the revision.
    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::InstanceAdded {
                source_id,
                center_label,
                path,
                stamp,
                meta,
            } => {
                self.remove_file(source_id, path);
                let series = self
                    .series
                    .entry((source_id.clone(), meta.series_uid.clone()))
                    .or_insert_with(|| SeriesEntry {
                        source_id: source_id.clone(),
                        center_label: center_label.clone(),
                        patient_id: meta.patient_id.clone(),
                        patient_name: meta.patient_name.clone(),
                        study_uid: meta.study_uid.clone(),
                        study_date: meta.study_date,
                        modality: meta.modality.clone(),
                        series_uid: meta.series_uid.clone(),
                        series_description: meta.series_description.clone(),
                        instances: BTreeMap::new(),
                    });
                series.instances.insert(path.clone(), meta.sop_uid.clone());
                self.files.insert(
                    (source_id.clone(), path.clone()),
                    FileRecord {
                        source_id: source_id.clone(),
                        path: path.clone(),
                        stamp: *stamp,
                        state: FileState::Indexed {
                            series_uid: meta.series_uid.clone(),
                            sop_uid: meta.sop_uid.clone(),
                        },
                    },
                );
            }
            Event::FileRejected {
                source_id,
                path,
                stamp,
                error_kind,
                message,
            } => {
                self.remove_file(source_id, path);
                self.files.insert(
                    (source_id.clone(), path.clone()),
                    FileRecord {
                        source_id: source_id.clone(),
                        path: path.clone(),
                        stamp: *stamp,
                        state: FileState::Rejected {
                            error_kind: error_kind.clone(),
                            message: message.clone(),
                        },
                    },
                );
            }
            Event::InstanceRemoved { source_id, path } => self.remove_file(source_id, path),
            Event::AnnotationUpserted { annotation } => {
                self.annotations.insert(annotation.id.clone(), annotation.clone());
            }
            Event::AnnotationDeleted { id } => {
                self.annotations.remove(id);
            }
        }
        self.revision += 1;
    }

    /// Checks internal references: every indexed file points at a series
    /// that lists it, and every series instance has an indexed file.
    pub fn check_consistency(&self) -> Result<(), String> {
        for f in self.files.values() {
            if let FileState::Indexed { series_uid, sop_uid } = &f.state {
                let s = self
                    .series
                    .get(&(f.source_id.clone(), series_uid.clone()))
                    .ok_or_else(|| format!("file {} references missing series {series_uid}", f.path))?;
                if s.instances.get(&f.path) != Some(sop_uid) {
                    return Err(format!("series {series_uid} does not list {}", f.path));
                }
            }
        }
        for s in self.series.values() {
            if s.instances.is_empty() {
                return Err(format!("series {} has no instances", s.series_uid));
            }
            for path in s.instances.keys() {
                match self.files.get(&(s.source_id.clone(), path.clone())) {
                    Some(FileRecord {
                        state: FileState::Indexed { .. },
                        ..
                    }) => {}
                    _ => return Err(format!("instance {path} has no indexed file")),
                }
            }
        }
        Ok(())
    }
}
