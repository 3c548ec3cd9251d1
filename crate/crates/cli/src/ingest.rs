use std::path::PathBuf;

use mivs_core::sync::Event;
use serde_json::json;

use crate::catalog;
use crate::CliError;

#[derive(clap::Args)]
pub struct Args {
    /// Directory to scan.
    #[arg(long)]
    source: PathBuf,
    #[arg(long, default_value = "local")]
    source_id: String,
    #[arg(long, default_value = "")]
    center_label: String,
    /// Durable catalog directory; in-memory when omitted.
    #[arg(long)]
    store: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<(), CliError> {
    let store = catalog::open_store(a.store.as_deref())?;
    let mut sources = catalog::local_sources(&[a.source], &a.source_id);
    sources[0].center_label = a.center_label;
    let scans = catalog::scan(&store, &sources)?;
    let events: Vec<&Event> = scans.iter().flat_map(|s| s.result.as_ref().into_iter().flatten()).collect();
    for e in &events {
        if let Event::FileRejected { path, error_kind, message, .. } = e {
            eprintln!("rejected {path}: {error_kind}: {message}");
        }
    }
    let count = |kind: &str| events.iter().filter(|e| e.kind() == kind).count();
    let snapshot = store.snapshot();
    println!(
        "{}",
        json!({
            "added": count("added"),
            "rejected": count("rejected"),
            "removed": count("removed"),
            "series": snapshot.series_count(),
            "instances": snapshot.instance_count(),
        })
    );
    Ok(())
}
