use std::path::{Path, PathBuf};

use mivs_core::sync::{SourceConfig, SourceScan, Store};

use crate::CliError;

/// Source ids given to `--source` directories: `local`, `local-2`, …
pub fn local_sources(dirs: &[PathBuf], first_id: &str) -> Vec<SourceConfig> {
    dirs.iter()
        .enumerate()
        .map(|(i, dir)| SourceConfig {
            source_id: if i == 0 {
                first_id.to_string()
            } else {
                format!("{first_id}-{}", i + 1)
            },
            root_path: dir.clone(),
            poll_interval_secs: 5,
            center_label: String::new(),
        })
        .collect()
}

pub fn open_store(dir: Option<&Path>) -> Result<Store, CliError> {
    match dir {
        Some(d) => Store::open(d)
            .map(|(store, _)| store)
            .map_err(|e| CliError::Io(e.to_string())),
        None => Ok(Store::in_memory()),
    }
}

/// Scans `sources` into `store`; an unreadable source is an I/O error.
pub fn scan(store: &Store, sources: &[SourceConfig]) -> Result<Vec<SourceScan>, CliError> {
    let scans = store.scan(sources);
    if let Some(Err(e)) = scans.iter().map(|s| &s.result).find(|r| r.is_err()) {
        return Err(CliError::Io(e.to_string()));
    }
    Ok(scans)
}
