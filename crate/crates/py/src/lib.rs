//! Python bindings for `mivs_core`.
//!
//! Structured arguments (phantom, reconstruction and region-grow specs,
//! source configs, query rules) are accepted as JSON strings or plain
//! dicts and use the same schema as the HTTP API. Structured results come
//! back as dicts and lists.

use std::fmt::Display;
use std::path::PathBuf;

use mivs_core::annotation::{semi_auto_refine, RegionGrowParams, SliceView};
use mivs_core::dicom::{self, Element, Tag, Value, Vr};
use mivs_core::phantom::{PhantomSpec, SeriesIds};
use mivs_core::recon::Pixels;
use mivs_core::render::{self as core_render, ReconSpec, RenderMode};
use mivs_core::sync::{self, QueryRule, SourceConfig};
use mivs_core::volume::{Volume as CoreVolume, WindowSpec};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyString};
use pyo3::IntoPyObjectExt;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(mivs, MivsError, PyException);

fn err(e: impl Display) -> PyErr {
    MivsError::new_err(e.to_string())
}

/// Reads a str or a JSON-serialisable Python object into `T`.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if let Ok(s) = obj.cast::<PyString>() {
        s.to_str()?.to_owned()
    } else {
        let json = obj.py().import("json")?;
        json.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_vr(code: &str) -> PyResult<Vr> {
    let b = code.as_bytes();
    if b.len() != 2 {
        return Err(PyValueError::new_err(format!("bad VR {code:?}")));
    }
    Vr::from_code([b[0], b[1]]).ok_or_else(|| PyValueError::new_err(format!("bad VR {code:?}")))
}

/// One DICOM data set (file meta excluded).
#[pyclass(name = "DataSet", module = "mivs", skip_from_py_object)]
#[derive(Clone)]
struct PyDataSet(dicom::DataSet);

#[pymethods]
impl PyDataSet {
    #[new]
    #[pyo3(signature = (transfer_syntax = "1.2.840.10008.1.2.1"))]
    fn new(transfer_syntax: &str) -> Self {
        PyDataSet(dicom::DataSet::new(transfer_syntax))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        dicom::parse_file(data).map(PyDataSet).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = dicom::write_file(&self.0).map_err(err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn transfer_syntax(&self) -> &str {
        &self.0.transfer_syntax
    }

    /// Sorted (group, element) pairs.
    fn tags(&self) -> Vec<(u16, u16)> {
        self.0.elements().map(|e| (e.tag.group, e.tag.element)).collect()
    }

    fn vr(&self, group: u16, element: u16) -> PyResult<String> {
        self.element(group, element).map(|e| e.vr.as_str())
    }

    /// Decoded value: list of str or numbers, or bytes for binary VRs.
    fn get(&self, py: Python<'_>, group: u16, element: u16) -> PyResult<Py<PyAny>> {
        match &self.element(group, element)?.value {
            Value::Str(v) => v.into_py_any(py),
            Value::U16(v) => v.into_py_any(py),
            Value::I16(v) => v.into_py_any(py),
            Value::U32(v) => v.into_py_any(py),
            Value::I32(v) => v.into_py_any(py),
            Value::F32(v) => v.into_py_any(py),
            Value::F64(v) => v.into_py_any(py),
            Value::Bytes(v) => PyBytes::new(py, v).into_py_any(py),
        }
    }

    fn set_strings(&mut self, group: u16, element: u16, vr: &str, values: Vec<String>) -> PyResult<()> {
        self.0.insert(Element::strings(Tag::new(group, element), parse_vr(vr)?, values));
        Ok(())
    }

    fn set_bytes(&mut self, group: u16, element: u16, vr: &str, data: Vec<u8>) -> PyResult<()> {
        self.0.insert(Element::bytes(Tag::new(group, element), parse_vr(vr)?, data));
        Ok(())
    }

    fn set_u16(&mut self, group: u16, element: u16, value: u16) {
        self.0.insert(Element::u16(Tag::new(group, element), value));
    }

    fn remove(&mut self, group: u16, element: u16) -> bool {
        self.0.remove(Tag::new(group, element)).is_some()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl PyDataSet {
    fn element(&self, group: u16, element: u16) -> PyResult<&Element> {
        let tag = Tag::new(group, element);
        self.0.get(tag).ok_or_else(|| PyKeyError::new_err(tag.to_string()))
    }
}

/// Scalar volume in patient coordinates, x-fastest.
#[pyclass(name = "Volume", module = "mivs", frozen)]
struct PyVolume(CoreVolume);

#[pymethods]
impl PyVolume {
    /// Axis-aligned volume from x-fastest `values`.
    #[new]
    #[pyo3(signature = (dims, spacing, values, origin = [0.0; 3]))]
    fn new(dims: [usize; 3], spacing: [f64; 3], values: Vec<f32>, origin: [f64; 3]) -> PyResult<Self> {
        let axes = [nalgebra::Vector3::x(), nalgebra::Vector3::y(), nalgebra::Vector3::z()];
        CoreVolume::new(dims, spacing, origin.into(), axes, values)
            .map(PyVolume)
            .map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.0.spacing()
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.0.origin().into()
    }

    fn value_range(&self) -> (f32, f32) {
        self.0.value_range()
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<f32> {
        let d = self.0.dims();
        if i >= d[0] || j >= d[1] || k >= d[2] {
            return Err(PyIndexError::new_err(format!("({i}, {j}, {k}) outside {d:?}")));
        }
        Ok(self.0.get(i, j, k))
    }

    /// Axial slice `k`, x-fastest.
    fn slice(&self, k: usize) -> PyResult<Vec<f32>> {
        if k >= self.0.dims()[2] {
            return Err(PyIndexError::new_err(format!("slice {k} out of range")));
        }
        Ok(self.0.slice(k).to_vec())
    }

    /// Trilinear sample at a patient-space point.
    #[pyo3(signature = (point, fill = 0.0))]
    fn sample(&self, point: [f64; 3], fill: f64) -> f64 {
        self.0.sample_trilinear(point.into(), fill)
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?}, spacing={:?})", self.0.dims(), self.0.spacing())
    }
}

fn series_ids(spec_ids: Option<&Bound<'_, PyAny>>) -> PyResult<SeriesIds> {
    let mut ids = SeriesIds::random("PHANTOM");
    let Some(obj) = spec_ids else { return Ok(ids) };
    let map: std::collections::BTreeMap<String, String> = from_py(obj)?;
    for (k, v) in map {
        let slot = match k.as_str() {
            "patient_id" => &mut ids.patient_id,
            "patient_name" => &mut ids.patient_name,
            "study_uid" => &mut ids.study_uid,
            "series_uid" => &mut ids.series_uid,
            "study_date" => &mut ids.study_date,
            "modality" => &mut ids.modality,
            _ => return Err(PyValueError::new_err(format!("unknown id field {k:?}"))),
        };
        *slot = v;
    }
    Ok(ids)
}

/// Samples a phantom description into a volume.
#[pyfunction]
fn phantom_volume(py: Python<'_>, spec: &Bound<'_, PyAny>) -> PyResult<PyVolume> {
    let spec: PhantomSpec = from_py(spec)?;
    py.detach(|| spec.volume()).map(PyVolume).map_err(err)
}

/// Writes a phantom as one DICOM file per slice; returns the ids used and
/// the written paths.
#[pyfunction]
#[pyo3(signature = (spec, out_dir, ids = None))]
fn write_phantom(
    py: Python<'_>,
    spec: &Bound<'_, PyAny>,
    out_dir: PathBuf,
    ids: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let spec: PhantomSpec = from_py(spec)?;
    let ids = series_ids(ids)?;
    let files = py.detach(|| spec.write_series(&out_dir, &ids)).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "patient_id": ids.patient_id,
            "study_uid": ids.study_uid,
            "series_uid": ids.series_uid,
            "modality": ids.modality,
            "files": files,
        }),
    )
}

/// Series catalog, durable when opened on a directory.
#[pyclass(name = "Store", module = "mivs", frozen)]
struct PyStore(sync::Store);

#[pymethods]
impl PyStore {
    #[new]
    #[pyo3(signature = (dir = None))]
    fn new(dir: Option<PathBuf>) -> PyResult<Self> {
        match dir {
            Some(d) => sync::Store::open(&d).map(|(s, _)| PyStore(s)).map_err(err),
            None => Ok(PyStore(sync::Store::in_memory())),
        }
    }

    /// Scans source configs once and returns the committed events.
    fn scan(&self, py: Python<'_>, sources: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let sources: Vec<SourceConfig> = from_py(sources)?;
        SourceConfig::validate_all(&sources).map_err(err)?;
        let scans = py.detach(|| self.0.scan(&sources));
        let mut events = Vec::new();
        for s in scans {
            events.extend(s.result.map_err(err)?);
        }
        to_py(py, &events)
    }

    #[getter]
    fn revision(&self) -> u64 {
        self.0.snapshot().revision()
    }

    fn series_count(&self) -> usize {
        self.0.snapshot().series_count()
    }

    fn instance_count(&self) -> usize {
        self.0.snapshot().instance_count()
    }

    /// Every catalogued series, sorted.
    fn series(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &sync::list_series(&self.0.snapshot(), |_| true))
    }

    fn query(&self, py: Python<'_>, rule: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let rule: QueryRule = from_py(rule)?;
        to_py(py, &sync::query(&self.0.snapshot(), &rule).map_err(err)?)
    }

    /// Reads and assembles the primary copy of a series.
    fn load_series(&self, py: Python<'_>, series_uid: &str) -> PyResult<PyVolume> {
        let snapshot = self.0.snapshot();
        let entry = snapshot
            .primary_series(series_uid)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown series {series_uid}")))?;
        py.detach(|| sync::load_series_volume(entry)).map(PyVolume).map_err(err)
    }
}

fn recon_spec(mode: &str, spec: &Bound<'_, PyAny>) -> PyResult<ReconSpec> {
    let mode: RenderMode = mode.parse().map_err(err)?;
    let spec = ReconSpec::from_json(mode, from_py(spec)?).map_err(err)?;
    spec.validate().map_err(err)?;
    Ok(spec)
}

/// Reconstructs and encodes a PNG. `window` is (center, width).
#[pyfunction]
#[pyo3(signature = (volume, mode, spec, modality = "CT", window = None))]
fn render<'py>(
    py: Python<'py>,
    volume: &PyVolume,
    mode: &str,
    spec: &Bound<'py, PyAny>,
    modality: &str,
    window: Option<(f64, f64)>,
) -> PyResult<Bound<'py, PyBytes>> {
    let spec = recon_spec(mode, spec)?;
    let window = window.map(|(center, width)| WindowSpec { center, width });
    let png = py
        .detach(|| core_render::render_png(&volume.0, modality, &spec, window))
        .map_err(err)?;
    Ok(PyBytes::new(py, &png))
}

/// Raw reconstruction: {"width", "height", "channels", "pixels"}, with
/// float pixels for scalar modes and RGBA bytes for volume rendering.
#[pyfunction]
#[pyo3(signature = (volume, mode, spec, modality = "CT"))]
fn reconstruct(
    py: Python<'_>,
    volume: &PyVolume,
    mode: &str,
    spec: &Bound<'_, PyAny>,
    modality: &str,
) -> PyResult<Py<PyAny>> {
    let spec = recon_spec(mode, spec)?;
    let fill = core_render::fill_value(modality, &volume.0);
    let img = py.detach(|| core_render::reconstruct(&volume.0, &spec, fill)).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("width", img.width)?;
    out.set_item("height", img.height)?;
    out.set_item("channels", img.channels())?;
    match &img.pixels {
        Pixels::Scalar(v) => out.set_item("pixels", v)?,
        Pixels::Rgba(v) => out.set_item("pixels", PyBytes::new(py, v))?,
    }
    Ok(out.into_any().unbind())
}

/// (width, height, channels, bytes).
#[pyfunction]
fn decode_png<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(usize, usize, usize, Bound<'py, PyBytes>)> {
    let (w, h, c, bytes) = core_render::decode_png(data).map_err(err)?;
    Ok((w, h, c, PyBytes::new(py, &bytes)))
}

/// Region grow from a seed and outline the result as a polygon shape.
#[pyfunction]
fn refine(
    py: Python<'_>,
    width: usize,
    height: usize,
    data: Vec<f32>,
    params: &Bound<'_, PyAny>,
) -> PyResult<Py<PyAny>> {
    let params: RegionGrowParams = from_py(params)?;
    let view = SliceView::new(width, height, &data).map_err(err)?;
    to_py(py, &semi_auto_refine(&view, &params).map_err(err)?)
}

#[pymodule]
fn mivs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MivsError", m.py().get_type::<MivsError>())?;
    m.add_class::<PyDataSet>()?;
    m.add_class::<PyVolume>()?;
    m.add_class::<PyStore>()?;
    m.add_function(wrap_pyfunction!(phantom_volume, m)?)?;
    m.add_function(wrap_pyfunction!(write_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(decode_png, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    Ok(())
}
