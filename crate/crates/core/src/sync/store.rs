//! Durable catalog store.
//!
//! Layout of a store directory:
//!
//! * `catalog.log`: one record per line,
//!   `{"crc":<crc32 of rec>,"rec":{"rev":N,"type":"InstanceAdded",…}}`.
//!   `crc` is the CRC-32 (IEEE) of the exact bytes of the `rec` value.
//! * `snapshot.json`: `{"crc":<crc32 of catalog>,"catalog":{…}}`, written
//!   to a temporary file and renamed into place.
//!
//! Loading reads the snapshot, then replays log records with a revision
//! above the snapshot's. Replay stops at the first torn, corrupt or
//! out-of-sequence record; the log is truncated there and the number of
//! discarded bytes is reported.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use super::{scan_source, Catalog, Event, SourceConfig, SyncError};

pub const LOG_FILE: &str = "catalog.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const DEFAULT_SNAPSHOT_EVERY: usize = 10_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    rev: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Deserialize)]
struct Envelope<'a> {
    crc: u32,
    #[serde(borrow)]
    rec: &'a RawValue,
}

#[derive(Deserialize)]
struct SnapshotEnvelope<'a> {
    crc: u32,
    #[serde(borrow)]
    catalog: &'a RawValue,
}

/// Encodes one event as a checksummed log line (with trailing newline).
pub fn encode_record(rev: u64, event: &Event) -> String {
    let rec = serde_json::to_string(&Record {
        rev,
        event: event.clone(),
    })
    .expect("events serialize");
    format!("{{\"crc\":{},\"rec\":{rec}}}\n", crc32fast::hash(rec.as_bytes()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub snapshot_revision: u64,
    /// Records applied on top of the snapshot.
    pub replayed: usize,
    /// Records already covered by the snapshot.
    pub skipped: usize,
    /// Trailing log bytes dropped because of a torn or corrupt record.
    pub discarded_bytes: u64,
    pub corrupt: bool,
}

/// Replays log bytes onto `catalog`. Returns the report and the length of
/// the valid prefix.
pub fn replay_log(catalog: &mut Catalog, bytes: &[u8]) -> (LoadReport, usize) {
    let mut report = LoadReport {
        snapshot_revision: catalog.revision(),
        ..Default::default()
    };
    let mut pos = 0;
    while pos < bytes.len() {
        let valid = bytes[pos..].iter().position(|&b| b == b'\n').and_then(|nl| {
            let env: Envelope = serde_json::from_slice(&bytes[pos..pos + nl]).ok()?;
            if crc32fast::hash(env.rec.get().as_bytes()) != env.crc {
                return None;
            }
            let rec: Record = serde_json::from_str(env.rec.get()).ok()?;
            Some((nl, rec))
        });
        let Some((nl, rec)) = valid else { break };
        if rec.rev <= catalog.revision() {
            report.skipped += 1;
        } else if rec.rev == catalog.revision() + 1 {
            catalog.apply(&rec.event);
            report.replayed += 1;
        } else {
            break;
        }
        pos += nl + 1;
    }
    report.discarded_bytes = (bytes.len() - pos) as u64;
    report.corrupt = pos < bytes.len();
    (report, pos)
}

struct Writer {
    catalog: Catalog,
    log: Option<File>,
    since_snapshot: usize,
}

/// Result of scanning one source.
#[derive(Debug)]
pub struct SourceScan {
    pub source_id: String,
    pub result: Result<Vec<Event>, SyncError>,
}

/// Single-writer catalog store with atomically published read snapshots.
pub struct Store {
    dir: Option<PathBuf>,
    writer: Mutex<Writer>,
    published: RwLock<Arc<Catalog>>,
    snapshot_every: usize,
}

impl Store {
    /// A store without persistence.
    pub fn in_memory() -> Store {
        Store {
            dir: None,
            writer: Mutex::new(Writer {
                catalog: Catalog::new(),
                log: None,
                since_snapshot: 0,
            }),
            published: RwLock::new(Arc::new(Catalog::new())),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }

    /// Opens (creating if needed) a store directory and recovers its catalog.
    pub fn open(dir: &Path) -> Result<(Store, LoadReport), StoreError> {
        Store::open_with(dir, DEFAULT_SNAPSHOT_EVERY)
    }

    /// As [`Store::open`], compacting after every `snapshot_every` records.
    pub fn open_with(dir: &Path, snapshot_every: usize) -> Result<(Store, LoadReport), StoreError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let mut catalog = match std::fs::read(&snap_path) {
            Ok(bytes) => {
                let env: SnapshotEnvelope =
                    serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
                if crc32fast::hash(env.catalog.get().as_bytes()) != env.crc {
                    return Err(StoreError::CorruptSnapshot("checksum mismatch".into()));
                }
                serde_json::from_str(env.catalog.get()).map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Catalog::new(),
            Err(e) => return Err(io_err(&snap_path)(e)),
        };
        let log_path = dir.join(LOG_FILE);
        let bytes = match std::fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&log_path)(e)),
        };
        let (report, valid_len) = replay_log(&mut catalog, &bytes);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        if report.corrupt {
            log.set_len(valid_len as u64).map_err(io_err(&log_path))?;
        }
        let store = Store {
            dir: Some(dir.to_path_buf()),
            published: RwLock::new(Arc::new(catalog.clone())),
            writer: Mutex::new(Writer {
                catalog,
                log: Some(log),
                since_snapshot: report.replayed + report.skipped,
            }),
            snapshot_every: snapshot_every.max(1),
        };
        Ok((store, report))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// The latest published catalog. Never reflects a partial scan or
    /// transaction.
    pub fn snapshot(&self) -> Arc<Catalog> {
        self.published.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn lock(&self) -> MutexGuard<'_, Writer> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, w: &Writer) {
        *self.published.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(w.catalog.clone());
    }

    /// Logs then applies `events`. Nothing is applied if the write fails.
    fn append(&self, w: &mut Writer, events: &[Event]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        if let (Some(log), Some(dir)) = (w.log.as_mut(), self.dir.as_ref()) {
            let base = w.catalog.revision();
            let buf: String = events
                .iter()
                .enumerate()
                .map(|(i, e)| encode_record(base + i as u64 + 1, e))
                .collect();
            let path = dir.join(LOG_FILE);
            log.write_all(buf.as_bytes()).map_err(io_err(&path))?;
            log.sync_data().map_err(io_err(&path))?;
        }
        for e in events {
            w.catalog.apply(e);
        }
        w.since_snapshot += events.len();
        if self.dir.is_some() && w.since_snapshot >= self.snapshot_every {
            self.compact_locked(w)?;
        }
        Ok(())
    }

    /// Appends events as one published unit and returns the new revision.
    pub fn commit(&self, events: &[Event]) -> Result<u64, StoreError> {
        let mut w = self.lock();
        self.append(&mut w, events)?;
        self.publish(&w);
        Ok(w.catalog.revision())
    }

    /// Runs `f` against the writer's catalog while holding the write lock
    /// and commits the events it returns.
    pub fn transact<T, E>(&self, f: impl FnOnce(&Catalog) -> Result<(Vec<Event>, T), E>) -> Result<T, E>
    where
        E: From<StoreError>,
    {
        let mut w = self.lock();
        let (events, out) = f(&w.catalog)?;
        self.append(&mut w, &events)?;
        if !events.is_empty() {
            self.publish(&w);
        }
        Ok(out)
    }

    /// Scans every source in order under the write lock and publishes once
    /// at the end.
    pub fn scan(&self, sources: &[SourceConfig]) -> Vec<SourceScan> {
        let mut w = self.lock();
        let mut out = Vec::with_capacity(sources.len());
        for cfg in sources {
            let result = scan_source(cfg, &w.catalog).and_then(|events| {
                self.append(&mut w, &events)?;
                Ok(events)
            });
            out.push(SourceScan {
                source_id: cfg.source_id.clone(),
                result,
            });
        }
        self.publish(&w);
        out
    }

    fn compact_locked(&self, w: &mut Writer) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let catalog = serde_json::to_string(&w.catalog).expect("catalogs serialize");
        let body = format!("{{\"crc\":{},\"catalog\":{catalog}}}", crc32fast::hash(catalog.as_bytes()));
        let tmp = dir.join(format!(".{SNAPSHOT_FILE}.tmp"));
        let target = dir.join(SNAPSHOT_FILE);
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(body.as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, &target).map_err(io_err(&target))?;
        if let Some(log) = &w.log {
            let path = dir.join(LOG_FILE);
            log.set_len(0).map_err(io_err(&path))?;
            log.sync_all().map_err(io_err(&path))?;
        }
        w.since_snapshot = 0;
        Ok(())
    }

    /// Writes a snapshot of the current catalog and empties the log.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut w = self.lock();
        self.compact_locked(&mut w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{Annotation, Shape};
    use crate::sync::{FileStamp, InstanceMeta};
    use proptest::prelude::*;

    fn added(i: usize, source: &str) -> Event {
        Event::InstanceAdded {
            source_id: source.into(),
            center_label: String::new(),
            path: format!("/data/{i}.dcm"),
            stamp: FileStamp { size: i as u64, mtime_ns: 7 },
            meta: InstanceMeta {
                patient_id: format!("P{}", i % 3),
                patient_name: String::new(),
                study_uid: format!("1.{}", i % 5),
                study_date: None,
                modality: "CT".into(),
                series_uid: format!("1.{}.{}", i % 5, i % 2),
                series_description: String::new(),
                sop_uid: format!("2.{i}"),
            },
        }
    }

    fn annotation(id: &str) -> Annotation {
        let t = chrono::DateTime::parse_from_rfc3339("2024-05-01T10:00:00Z").unwrap().to_utc();
        Annotation {
            id: id.into(),
            series_uid: "1.0.0".into(),
            slice_index: 2,
            shape: Shape::Circle { cx: 1.0, cy: 2.0, r: 3.0 },
            label: "l".into(),
            author: "u".into(),
            version: 1,
            created_at: t,
            updated_at: t,
        }
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (store, report) = Store::open(dir.path()).unwrap();
        assert_eq!(*store.snapshot(), Catalog::new());
        assert!(!report.corrupt);
        drop(store);
        let (store, _) = Store::open(dir.path()).unwrap();
        assert_eq!(*store.snapshot(), Catalog::new());
    }

    #[test]
    fn torn_tail_recovers_complete_records() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open(dir.path()).unwrap();
        for i in 0..100 {
            store.commit(&[added(i, "a")]).unwrap();
        }
        drop(store);
        let log = dir.path().join(LOG_FILE);
        let bytes = std::fs::read(&log).unwrap();
        let last_start = bytes[..bytes.len() - 1].iter().rposition(|&b| b == b'\n').unwrap() + 1;
        let cut = last_start + (bytes.len() - last_start) / 2;
        std::fs::write(&log, &bytes[..cut]).unwrap();

        let (store, report) = Store::open(dir.path()).unwrap();
        assert_eq!(report.replayed, 99);
        assert!(report.corrupt);
        assert_eq!(report.discarded_bytes, (cut - last_start) as u64);
        assert_eq!(store.snapshot().revision(), 99);
        assert_eq!(std::fs::metadata(&log).unwrap().len(), last_start as u64);
        store.commit(&[added(100, "a")]).unwrap();
        drop(store);
        let (store, report) = Store::open(dir.path()).unwrap();
        assert!(!report.corrupt);
        assert_eq!(store.snapshot().revision(), 100);
    }

    #[test]
    fn flipped_byte_stops_replay() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open(dir.path()).unwrap();
        for i in 0..10 {
            store.commit(&[added(i, "a")]).unwrap();
        }
        drop(store);
        let log = dir.path().join(LOG_FILE);
        let mut bytes = std::fs::read(&log).unwrap();
        let line5 = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(4).unwrap().0 + 1;
        let target = line5 + 40;
        bytes[target] = if bytes[target] == b'7' { b'8' } else { b'7' };
        std::fs::write(&log, &bytes).unwrap();
        let (store, report) = Store::open(dir.path()).unwrap();
        assert_eq!(report.replayed, 5);
        assert!(report.corrupt);
        store.snapshot().check_consistency().unwrap();
    }

    #[test]
    fn snapshot_plus_tail() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open_with(dir.path(), 7).unwrap();
        for i in 0..19 {
            store.commit(&[added(i, "a")]).unwrap();
        }
        store
            .commit(&[Event::AnnotationUpserted {
                annotation: annotation("x"),
            }])
            .unwrap();
        let expected = (*store.snapshot()).clone();
        drop(store);
        let (store, report) = Store::open(dir.path()).unwrap();
        assert_eq!(*store.snapshot(), expected);
        assert_eq!(report.snapshot_revision, 14);
        assert_eq!(report.replayed, 6);
    }

    #[test]
    fn transact_aborts_without_effect() {
        let store = Store::in_memory();
        let r: Result<(), StoreError> = store.transact(|_| {
            Err(StoreError::CorruptSnapshot("no".into()))
        });
        assert!(r.is_err());
        assert_eq!(store.snapshot().revision(), 0);
    }

    fn arb_event() -> impl Strategy<Value = Event> {
        prop_oneof![
            (0usize..30, prop::sample::select(vec!["a", "b"])).prop_map(|(i, s)| added(i, s)),
            (0usize..30, prop::sample::select(vec!["a", "b"])).prop_map(|(i, s)| Event::InstanceRemoved {
                source_id: s.into(),
                path: format!("/data/{i}.dcm"),
            }),
            (0usize..30).prop_map(|i| Event::FileRejected {
                source_id: "a".into(),
                path: format!("/data/{i}.dcm"),
                stamp: FileStamp { size: 0, mtime_ns: 0 },
                error_kind: "Truncated".into(),
                message: "cut".into(),
            }),
            (0usize..4).prop_map(|i| Event::AnnotationUpserted { annotation: annotation(&i.to_string()) }),
            (0usize..4).prop_map(|i| Event::AnnotationDeleted { id: i.to_string() }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn replay_equals_in_memory(events in prop::collection::vec(arb_event(), 0..60), every in 1usize..30) {
            let dir = tempfile::tempdir().unwrap();
            let (store, _) = Store::open_with(dir.path(), every).unwrap();
            let mut model = Catalog::new();
            for chunk in events.chunks(3) {
                store.commit(chunk).unwrap();
                for e in chunk {
                    model.apply(e);
                }
            }
            prop_assert_eq!(&*store.snapshot(), &model);
            drop(store);
            let (store, report) = Store::open(dir.path()).unwrap();
            prop_assert!(!report.corrupt);
            prop_assert_eq!(&*store.snapshot(), &model);
        }

        #[test]
        fn every_log_prefix_loads_consistently(events in prop::collection::vec(arb_event(), 1..40), cut_frac in 0.0f64..1.0) {
            let mut bytes = Vec::new();
            let mut model = Catalog::new();
            for e in &events {
                model.apply(e);
                bytes.extend(encode_record(model.revision(), e).into_bytes());
            }
            let cut = (bytes.len() as f64 * cut_frac) as usize;
            let mut c = Catalog::new();
            let (report, valid) = replay_log(&mut c, &bytes[..cut]);
            prop_assert!(valid <= cut);
            prop_assert_eq!(report.discarded_bytes as usize, cut - valid);
            prop_assert!(c.check_consistency().is_ok());
            let mut prefix = Catalog::new();
            for e in &events[..report.replayed] {
                prefix.apply(e);
            }
            prop_assert_eq!(c, prefix);
        }
    }
}
