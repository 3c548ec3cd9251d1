use std::path::PathBuf;

use mivs_core::render::{self, ReconSpec, RenderMode};
use mivs_core::sync::{load_series_volume, LoadError};
use mivs_core::volume::WindowSpec;

use crate::catalog;
use crate::CliError;

#[derive(clap::Args)]
pub struct Args {
    /// mpr, slab, cpr or vr.
    #[arg(value_parser = parse_mode)]
    mode: RenderMode,
    #[arg(long)]
    series: String,
    /// JSON reconstruction spec, the same document the API takes as `spec`.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory to scan; repeat for several sources.
    #[arg(long = "source")]
    sources: Vec<PathBuf>,
    /// Durable catalog directory to read (and refresh when sources are given).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Display window as CENTER,WIDTH.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<WindowSpec>,
}

fn parse_mode(s: &str) -> Result<RenderMode, String> {
    s.parse().map_err(|e: render::RenderError| e.to_string())
}

fn parse_window(s: &str) -> Result<WindowSpec, String> {
    let (c, w) = s.split_once(',').ok_or("expected CENTER,WIDTH")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number {v:?}"));
    Ok(WindowSpec {
        center: num(c)?,
        width: num(w)?,
    })
}

pub fn run(a: Args) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| CliError::Io(format!("{}: {e}", a.spec.display())))?;
    let json: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", a.spec.display())))?;
    let spec = ReconSpec::from_json(a.mode, json)
        .and_then(|s| s.validate().map(|_| s))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    if let Some(w) = &a.window {
        w.validate().map_err(|e| CliError::Invalid(format!("invalid window: {e}")))?;
    }

    let store = catalog::open_store(a.store.as_deref())?;
    catalog::scan(&store, &catalog::local_sources(&a.sources, "local"))?;
    let snapshot = store.snapshot();
    let entry = snapshot
        .primary_series(&a.series)
        .ok_or_else(|| CliError::UnknownSeries(a.series.clone()))?;
    let volume = load_series_volume(entry).map_err(|e| match e {
        LoadError::Io { .. } => CliError::Io(e.to_string()),
        _ => CliError::Invalid(e.to_string()),
    })?;
    let png = render::render_png(&volume, &entry.modality, &spec, a.window)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    std::fs::write(&a.out, png).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))
}
