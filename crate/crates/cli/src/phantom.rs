use std::path::PathBuf;

use clap::ValueEnum;
use mivs_core::phantom::{PhantomError, PhantomSpec, SeriesIds};
use serde_json::json;

use crate::CliError;

#[derive(Clone, Copy, ValueEnum)]
pub enum Kind {
    Gradient,
    Sphere,
    Tube,
}

#[derive(clap::Args)]
pub struct Args {
    /// Phantom kind; ignored when --spec is given.
    #[arg(long, value_enum, required_unless_present = "spec")]
    kind: Option<Kind>,
    /// JSON phantom description, for fields the flags do not cover.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Edge length, or nx,ny,nz.
    #[arg(long, default_value = "32", value_parser = parse_dims)]
    dims: [usize; 3],
    /// Gradient axis (0 = x, 1 = y, 2 = z).
    #[arg(long, default_value_t = 0)]
    axis: usize,
    /// Sphere or tube radius in mm.
    #[arg(long)]
    radius: Option<f64>,
    /// Value inside the sphere or tube.
    #[arg(long, default_value_t = 300.0)]
    value: f64,
    #[arg(long, default_value_t = -1000.0, allow_hyphen_values = true)]
    background: f64,
    #[arg(long, default_value = "PHANTOM")]
    patient_id: String,
    #[arg(long, default_value = "CT")]
    modality: String,
    /// StudyDate as YYYYMMDD.
    #[arg(long, default_value = "20240101")]
    study_date: String,
    /// SeriesInstanceUID to stamp; random when omitted.
    #[arg(long)]
    series_uid: Option<String>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad dimension {p:?}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err("expected N or NX,NY,NZ".into()),
    }
}

fn build(a: &Args) -> Result<PhantomSpec, CliError> {
    if let Some(path) = &a.spec {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        return serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid phantom spec: {e}")));
    }
    let min_edge = *a.dims.iter().min().unwrap_or(&0) as f64;
    let mut spec = match a.kind.expect("clap requires kind without spec") {
        Kind::Gradient => PhantomSpec::gradient(a.dims, a.axis),
        Kind::Sphere => PhantomSpec::sphere(a.dims, a.radius.unwrap_or(min_edge / 4.0), a.value),
        Kind::Tube => PhantomSpec::helical_tube(a.dims, a.radius.unwrap_or(min_edge / 16.0).max(1.0), a.value),
    };
    spec.background = a.background;
    Ok(spec)
}

pub fn run(a: Args) -> Result<(), CliError> {
    let spec = build(&a)?;
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut ids = SeriesIds::random(&a.patient_id);
    ids.modality = a.modality.clone();
    ids.study_date = a.study_date.clone();
    if let Some(uid) = &a.series_uid {
        ids.series_uid = uid.clone();
    }
    let files = spec.write_series(&a.out, &ids).map_err(|e| match e {
        PhantomError::Io { .. } => CliError::Io(e.to_string()),
        PhantomError::InvalidSpec(_) => CliError::Usage(e.to_string()),
        PhantomError::Dicom(_) => CliError::Invalid(e.to_string()),
    })?;
    println!(
        "{}",
        json!({
            "series_uid": ids.series_uid,
            "study_uid": ids.study_uid,
            "patient_id": ids.patient_id,
            "files": files.len(),
            "dir": a.out,
        })
    );
    Ok(())
}
