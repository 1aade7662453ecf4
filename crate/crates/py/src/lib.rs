//! Python bindings: fixtures, reconstruction, skinning and export.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use silrig::boundary;
use silrig::config::{Config, InputConfig};
use silrig::export::{mesh_from_json, mesh_to_json, write_gltf};
use silrig::fixtures::{make_fixture_sized, FixtureName};
use silrig::mesh::RiggedMesh as CoreMesh;
use silrig::pipeline::{self, Inputs, Params};
use silrig::skeleton::Clip;
use silrig::{raster, BoundaryPolygon, Error, RasterMap, Vec2};

create_exception!(
    silrig_py,
    InputError,
    PyValueError,
    "Malformed or unusable input."
);
create_exception!(
    silrig_py,
    StageError,
    PyRuntimeError,
    "A pipeline stage failed."
);

fn py_err(e: Error) -> PyErr {
    if e.is_input_error() {
        InputError::new_err(e.to_string())
    } else {
        StageError::new_err(e.to_string())
    }
}

fn to_py(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| InputError::new_err(e.to_string()))
}

fn params(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<Params> {
    let p: Params = match obj {
        Some(o) if !o.is_none() => from_py(py, o)?,
        _ => Params::default(),
    };
    p.validate().map_err(py_err)?;
    Ok(p)
}

/// Binary mask.
#[pyclass(frozen, skip_from_py_object, module = "silrig_py")]
#[derive(Clone)]
pub struct Mask {
    inner: RasterMap,
}

#[pymethods]
impl Mask {
    /// Rows of truthy values, top row first.
    #[staticmethod]
    fn from_rows(rows: Vec<Vec<bool>>) -> PyResult<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
            return Err(InputError::new_err(
                "mask rows must be non-empty and equally long",
            ));
        }
        Ok(Self {
            inner: RasterMap::mask_from_fn(w, h, |x, y| rows[y][x]),
        })
    }

    /// PNG (nonzero is inside) or `.fmap`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = RasterMap::load_any(&path, raster::Semantic::Mask).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(path).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn count(&self) -> usize {
        self.inner.count_set()
    }

    fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.inner.height())
            .map(|y| {
                (0..self.inner.width())
                    .map(|x| self.inner.is_set(x, y))
                    .collect()
            })
            .collect()
    }

    fn iou(&self, other: &Mask) -> f64 {
        raster::mask_iou(&self.inner, &other.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mask({}x{}, {} set)",
            self.inner.width(),
            self.inner.height(),
            self.inner.count_set()
        )
    }
}

/// Synthetic subject with its template, pose and ground truth.
#[pyclass(frozen, module = "silrig_py")]
pub struct Fixture {
    inner: silrig::fixtures::Fixture,
}

#[pymethods]
impl Fixture {
    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name.as_str()
    }

    #[getter]
    fn silhouette(&self) -> Mask {
        Mask {
            inner: self.inner.silhouette.clone(),
        }
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(dir).map_err(py_err)
    }

    /// Runs the full pipeline on this fixture. `params` is a dict of
    /// overrides with the same keys as the `[params]` config table.
    #[pyo3(signature = (params = None))]
    fn reconstruct(
        &self,
        py: Python<'_>,
        params: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Reconstruction> {
        let p = self::params(py, params)?;
        let f = &self.inner;
        let inputs = Inputs {
            silhouette: f.silhouette.clone(),
            color: Some(f.color.clone()),
            template: f.template.clone(),
            pose: f.pose.clone(),
            camera: f.camera,
            back_labels: None,
        };
        run(py, &inputs, &p)
    }
}

/// Builds one of the named synthetic fixtures.
#[pyfunction]
#[pyo3(signature = (name, size = 256))]
fn make_fixture(py: Python<'_>, name: &str, size: usize) -> PyResult<Fixture> {
    let n: FixtureName = name.parse().map_err(py_err)?;
    let inner = py.detach(|| make_fixture_sized(n, size)).map_err(py_err)?;
    Ok(Fixture { inner })
}

#[pyfunction]
fn fixture_names() -> Vec<&'static str> {
    FixtureName::ALL.iter().map(|n| n.as_str()).collect()
}

/// Skinned triangle mesh with its skeleton and atlas coordinates.
#[pyclass(frozen, module = "silrig_py")]
pub struct RiggedMesh {
    inner: CoreMesh,
}

#[pymethods]
impl RiggedMesh {
    /// Reads a `mesh.json` dump.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| InputError::new_err(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner: mesh_from_json(&text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        mesh_to_json(&self.inner).map_err(py_err)
    }

    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner
            .vertices
            .iter()
            .map(|v| [v.x, v.y, v.z])
            .collect()
    }

    fn triangles(&self) -> Vec<[u32; 3]> {
        self.inner.triangles.clone()
    }

    fn uvs(&self) -> Vec<[f64; 2]> {
        self.inner.uvs.clone()
    }

    /// One row of joint weights per vertex.
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner
            .weights
            .chunks(self.inner.skeleton.len())
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn joint_names(&self) -> Vec<String> {
        self.inner
            .skeleton
            .joints()
            .iter()
            .map(|j| j.name.clone())
            .collect()
    }

    /// Poses every frame of a clip (`{"fps": .., "frames": [{"rotations": {..}}]}`)
    /// and returns the vertex positions per frame.
    fn animate(&self, py: Python<'_>, clip: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<[f64; 3]>>> {
        let clip: Clip = from_py(py, clip)?;
        let frames = py
            .detach(|| pipeline::animate(&self.inner, &clip))
            .map_err(py_err)?;
        Ok(frames
            .into_iter()
            .map(|f| f.into_iter().map(|v| [v.x, v.y, v.z]).collect())
            .collect())
    }

    /// Writes `<stem>.gltf`, `.bin` and `.png`; returns the glTF path.
    #[pyo3(signature = (dir, stem = "mesh", clip = None))]
    fn write_gltf(
        &self,
        py: Python<'_>,
        dir: PathBuf,
        stem: &str,
        clip: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<PathBuf> {
        let clip: Option<Clip> = clip
            .filter(|c| !c.is_none())
            .map(|c| from_py(py, c))
            .transpose()?;
        write_gltf(&self.inner, dir, stem, clip.as_ref()).map_err(py_err)
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertices.len()
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.triangles.len()
    }

    fn is_closed(&self) -> bool {
        self.inner.is_closed()
    }

    fn __repr__(&self) -> String {
        format!(
            "RiggedMesh({} vertices, {} triangles)",
            self.inner.vertices.len(),
            self.inner.triangles.len()
        )
    }
}

/// Output of one pipeline run.
#[pyclass(frozen, module = "silrig_py")]
pub struct Reconstruction {
    inner: pipeline::Reconstruction,
}

#[pymethods]
impl Reconstruction {
    #[getter]
    fn mesh(&self) -> RiggedMesh {
        RiggedMesh {
            inner: self.inner.mesh.clone(),
        }
    }

    /// The run report as plain dicts and lists.
    #[getter]
    fn report(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.report)
    }

    #[getter]
    fn iou(&self) -> f64 {
        self.inner.report.iou
    }

    fn intermediate_names(&self) -> Vec<String> {
        self.inner.intermediates.keys().cloned().collect()
    }

    /// A named intermediate map as rows of floats (first channel).
    fn intermediate(&self, name: &str) -> PyResult<Vec<Vec<f32>>> {
        let m = self
            .inner
            .intermediates
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("no intermediate named {name:?}")))?;
        Ok((0..m.height())
            .map(|y| (0..m.width()).map(|x| m.get(x, y, 0)).collect())
            .collect())
    }
}

fn run(py: Python<'_>, inputs: &Inputs, params: &Params) -> PyResult<Reconstruction> {
    let inner = py
        .detach(|| pipeline::reconstruct(inputs, params))
        .map_err(py_err)?;
    Ok(Reconstruction { inner })
}

/// Reconstructs from a run config file (TOML or JSON).
#[pyfunction]
fn reconstruct_config(py: Python<'_>, path: PathBuf) -> PyResult<Reconstruction> {
    let cfg = Config::load(&path).map_err(py_err)?;
    let inputs = cfg.input.load().map_err(py_err)?;
    run(py, &inputs, &cfg.params)
}

/// Reconstructs from a fixture directory or a mask file.
#[pyfunction]
#[pyo3(signature = (fixture = None, mask = None, color = None, params = None))]
fn reconstruct(
    py: Python<'_>,
    fixture: Option<PathBuf>,
    mask: Option<PathBuf>,
    color: Option<PathBuf>,
    params: Option<&Bound<'_, PyAny>>,
) -> PyResult<Reconstruction> {
    let p = self::params(py, params)?;
    let input = InputConfig {
        fixture,
        mask,
        color,
        ..Default::default()
    };
    let inputs = input.load().map_err(py_err)?;
    run(py, &inputs, &p)
}

/// Cyclic monotone correspondence from `input` points to `template` points.
/// Returns the template index matched to each input point.
#[pyfunction]
#[pyo3(signature = (input, template, kappa = 32))]
fn match_boundaries(
    input: Vec<[f64; 2]>,
    template: Vec<[f64; 2]>,
    kappa: usize,
) -> PyResult<Vec<usize>> {
    let poly = |pts: Vec<[f64; 2]>| {
        BoundaryPolygon::new(pts.into_iter().map(|p| Vec2::new(p[0], p[1])).collect())
    };
    let a = poly(input).map_err(py_err)?;
    let b = poly(template).map_err(py_err)?;
    Ok(boundary::match_boundaries(&a, &b, kappa)
        .map_err(py_err)?
        .phi()
        .to_vec())
}

#[pyfunction]
fn mask_iou(a: &Mask, b: &Mask) -> f64 {
    raster::mask_iou(&a.inner, &b.inner)
}

#[pyfunction]
fn default_params(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &Params::default())
}

#[pymodule]
fn silrig_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("InputError", m.py().get_type::<InputError>())?;
    m.add("StageError", m.py().get_type::<StageError>())?;
    m.add_class::<Mask>()?;
    m.add_class::<Fixture>()?;
    m.add_class::<RiggedMesh>()?;
    m.add_class::<Reconstruction>()?;
    m.add_function(wrap_pyfunction!(make_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(fixture_names, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_config, m)?)?;
    m.add_function(wrap_pyfunction!(match_boundaries, m)?)?;
    m.add_function(wrap_pyfunction!(mask_iou, m)?)?;
    m.add_function(wrap_pyfunction!(default_params, m)?)?;
    Ok(())
}
