//! Python bindings. Grids cross the boundary as nested lists indexed
//! `[row][column]` (flows as `[row][column][2]`), so `numpy.asarray` works on
//! every return value and any nested sequence is accepted as input.

use corrdepth::{
    CameraIntrinsics, DepthFamily, DepthMap, DynamicObjectSpec, Error, FdOptions, FlowField, Grid, Image,
    LossId, LossInputs, LossWeights, Mask, OptimConfig, RegionShape, RigidMotion, RunTrace, SceneBundle, SceneSpec,
    TwistParams,
};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows<T> = Vec<Vec<T>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn grid_from_rows<T: Clone>(rows: Vec<Vec<T>>) -> PyResult<Grid<T>> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Grid::from_vec(width, height, rows.concat()).map_err(py_err)
}

fn rows<T: Clone>(grid: &Grid<T>) -> Vec<Vec<T>> {
    grid.as_slice().chunks(grid.width().max(1)).map(<[T]>::to_vec).collect()
}

fn depth_map(values: Vec<Vec<f64>>) -> PyResult<DepthMap> {
    DepthMap::new(grid_from_rows(values)?).map_err(py_err)
}

fn flow_field(vectors: Vec<Vec<[f64; 2]>>) -> PyResult<FlowField> {
    FlowField::new(grid_from_rows(vectors)?).map_err(py_err)
}

fn image_rows(img: &Image) -> Vec<Vec<Vec<f64>>> {
    (0..img.height())
        .map(|v| (0..img.width()).map(|u| (0..img.channels()).map(|c| img.at(u, v, c)).collect()).collect())
        .collect()
}

/// Pinhole intrinsics.
#[pyclass(name = "Camera", from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: CameraIntrinsics,
}

#[pymethods]
impl PyCamera {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> PyResult<Self> {
        Ok(PyCamera { inner: CameraIntrinsics::new(fx, fy, cx, cy).map_err(py_err)? })
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.inner.fx()
    }

    #[getter]
    fn fy(&self) -> f64 {
        self.inner.fy()
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx()
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy()
    }

    fn __repr__(&self) -> String {
        let k = &self.inner;
        format!("Camera(fx={}, fy={}, cx={}, cy={})", k.fx(), k.fy(), k.cx(), k.cy())
    }
}

/// Rigid motion `X_s = R·X_t + t`, with `R` given as an axis-angle vector.
#[pyclass(name = "Motion", from_py_object)]
#[derive(Clone)]
struct PyMotion {
    twist: TwistParams,
}

impl PyMotion {
    fn motion(&self) -> RigidMotion {
        self.twist.to_motion()
    }
}

#[pymethods]
impl PyMotion {
    #[new]
    #[pyo3(signature = (rotation = [0.0; 3], translation = [0.0; 3]))]
    fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        PyMotion { twist: TwistParams::new(rotation, translation) }
    }

    #[getter]
    fn rotation(&self) -> [f64; 3] {
        self.twist.rotation()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.twist.translation()
    }

    fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        *self.motion().rotation()
    }

    fn __repr__(&self) -> String {
        format!("Motion(rotation={:?}, translation={:?})", self.twist.rotation(), self.twist.translation())
    }
}

/// A synthesized two-view scene with ground truth.
#[pyclass(name = "Scene")]
struct PyScene {
    bundle: SceneBundle,
    twist: TwistParams,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn width(&self) -> usize {
        self.bundle.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.bundle.height()
    }

    #[getter]
    fn camera(&self) -> PyCamera {
        PyCamera { inner: self.bundle.intrinsics }
    }

    #[getter]
    fn motion(&self) -> PyMotion {
        PyMotion { twist: self.twist }
    }

    #[getter]
    fn depth(&self) -> Vec<Vec<f64>> {
        rows(self.bundle.depth_gt.values())
    }

    #[getter]
    fn flow(&self) -> Vec<Vec<[f64; 2]>> {
        rows(self.bundle.flow_gt.vectors())
    }

    #[getter]
    fn image_t(&self) -> Vec<Vec<Vec<f64>>> {
        image_rows(&self.bundle.image_t)
    }

    #[getter]
    fn image_s(&self) -> Vec<Vec<Vec<f64>>> {
        image_rows(&self.bundle.image_s)
    }

    #[getter]
    fn dynamic_mask(&self) -> Vec<Vec<bool>> {
        rows(&self.bundle.dynamic_mask)
    }

    fn __repr__(&self) -> String {
        format!("Scene({}x{}, {})", self.bundle.width(), self.bundle.height(), self.bundle.spec.family.name())
    }
}

/// Synthesizes a scene whose source depth satisfies `1/(D + t3) = a + b·u + c·v`.
///
/// `patch = (u0, v0, u1, v1, tx, ty, tz)` adds an independently moving
/// rectangle with its own translation.
#[pyfunction]
#[pyo3(signature = (camera, motion, width, height, a = 0.2, b = 1e-3, c = 5e-4, patch = None))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    camera: &PyCamera,
    motion: &PyMotion,
    width: usize,
    height: usize,
    a: f64,
    b: f64,
    c: f64,
    patch: Option<[f64; 7]>,
) -> PyResult<PyScene> {
    let mut spec = SceneSpec::new(DepthFamily::AffineInverseShift { a, b, c });
    if let Some(p) = patch {
        spec = spec.with_dynamic(DynamicObjectSpec {
            region: RegionShape::Rect { u0: p[0], v0: p[1], u1: p[2], v1: p[3] },
            translation: [p[4], p[5], p[6]],
        });
    }
    let bundle = corrdepth::synthesize(&spec, &camera.inner, &motion.motion(), width, height).map_err(py_err)?;
    Ok(PyScene { bundle, twist: motion.twist })
}

#[pyfunction]
fn rigid_flow(camera: &PyCamera, motion: &PyMotion, depth: Vec<Vec<f64>>) -> PyResult<Vec<Vec<[f64; 2]>>> {
    let flow = corrdepth::rigid_flow(&camera.inner, &motion.motion(), &depth_map(depth)?);
    Ok(rows(flow.vectors()))
}

#[pyfunction]
fn rotational_flow(camera: &PyCamera, motion: &PyMotion, width: usize, height: usize) -> Vec<Vec<[f64; 2]>> {
    rows(corrdepth::rotational_flow(&camera.inner, motion.motion().rotation(), width, height).vectors())
}

/// Unnormalized central-difference divergence; border pixels hold 0.
#[pyfunction]
fn divergence(flow: Vec<Vec<[f64; 2]>>) -> PyResult<Vec<Vec<f64>>> {
    let div = corrdepth::divergence(&flow_field(flow)?).map_err(py_err)?;
    Ok(rows(div.values()))
}

/// Returns `(depth, valid)`; invalid pixels hold depth 0.
#[pyfunction]
fn triangulate(
    camera: &PyCamera,
    motion: &PyMotion,
    flow: Vec<Vec<[f64; 2]>>,
) -> PyResult<(Rows<f64>, Rows<bool>)> {
    let tri = corrdepth::triangulate_depth(&camera.inner, &motion.motion(), &flow_field(flow)?);
    Ok((rows(tri.depth.values()), rows(tri.validity())))
}

/// Mean relative gap between the depth triangulated from `flow` and `depth`.
#[pyfunction]
fn cgdc_loss(camera: &PyCamera, motion: &PyMotion, flow: Vec<Vec<[f64; 2]>>, depth: Vec<Vec<f64>>) -> PyResult<f64> {
    let tri = corrdepth::triangulate_depth(&camera.inner, &motion.motion(), &flow_field(flow)?);
    Ok(corrdepth::cgdc_loss(&tri, &depth_map(depth)?).map_err(py_err)?.value)
}

/// Mismatch between the flow-divergence and depth-gradient fields.
#[pyfunction]
fn dpc_loss(camera: &PyCamera, motion: &PyMotion, flow: Vec<Vec<[f64; 2]>>, depth: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = motion.motion();
    let flow = flow_field(flow)?;
    let rotational = corrdepth::rotational_flow(&camera.inner, m.rotation(), flow.width(), flow.height());
    let translational = corrdepth::translational_flow(&flow, &rotational).map_err(py_err)?;
    let fields = corrdepth::differential_fields(&camera.inner, &m, &depth_map(depth)?, &translational).map_err(py_err)?;
    Ok(corrdepth::dpc_loss(&fields).map_err(py_err)?.value)
}

#[pyfunction]
fn bsca_loss(rigid: Vec<Vec<[f64; 2]>>, optical: Vec<Vec<[f64; 2]>>) -> PyResult<f64> {
    Ok(corrdepth::bsca_loss(&flow_field(rigid)?, &flow_field(optical)?).map_err(py_err)?.value)
}

#[pyfunction]
fn depth_metrics<'py>(py: Python<'py>, pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let (pred, gt) = (depth_map(pred)?, depth_map(gt)?);
    let mask = Mask::all(gt.width(), gt.height());
    let m = corrdepth::depth_metrics(&pred, &gt, &mask).map_err(py_err)?;
    let d = PyDict::new(py);
    for (k, v) in [
        ("abs_rel", m.abs_rel),
        ("sq_rel", m.sq_rel),
        ("rmse", m.rmse),
        ("rmse_log", m.rmse_log),
        ("delta1", m.delta1),
        ("delta2", m.delta2),
        ("delta3", m.delta3),
    ] {
        d.set_item(k, v)?;
    }
    d.set_item("count", m.count)?;
    Ok(d)
}

fn config(iterations: usize, weights: [f64; 4], seed: u64, stop_gradient: bool) -> PyResult<OptimConfig> {
    let weights = LossWeights::new(weights[0], weights[1], weights[2], weights[3]);
    weights.validate().map_err(py_err)?;
    Ok(OptimConfig { weights, iterations, seed, stop_gradient, ..Default::default() })
}

fn trace_dict<'py>(py: Python<'py>, trace: RunTrace) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let last = trace.last();
    d.set_item("abs_rel", last.metrics.abs_rel)?;
    d.set_item("static_abs_rel", last.static_abs_rel)?;
    d.set_item("dynamic_abs_rel", last.dynamic_abs_rel)?;
    d.set_item("patch_flow_gap", last.patch_flow_gap)?;
    let history: Vec<(usize, f64, f64)> =
        trace.records.iter().map(|r| (r.iteration, r.objective, r.metrics.abs_rel)).collect();
    d.set_item("history", history)?;
    d.set_item("depth", rows(trace.final_depth.values()))?;
    d.set_item("flow", rows(trace.final_flow.vectors()))?;
    Ok(d)
}

/// Recovers depth with pose and flow fixed. `weights` is `(w_p, w_c, w_d, w_b)`.
#[pyfunction]
#[pyo3(signature = (scene, iterations = 2000, weights = [0.0, 1.0, 0.1, 0.0], seed = 0, stop_gradient = false))]
fn recover_depth<'py>(
    py: Python<'py>,
    scene: &PyScene,
    iterations: usize,
    weights: [f64; 4],
    seed: u64,
    stop_gradient: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let config = config(iterations, weights, seed, stop_gradient)?;
    let trace = py.detach(|| corrdepth::recover_depth(&scene.bundle, &config)).map_err(py_err)?;
    trace_dict(py, trace)
}

/// Jointly refines depth and a free flow field.
#[pyfunction]
#[pyo3(signature = (scene, iterations = 2000, weights = [0.0, 1.0, 0.0, 0.1], seed = 0))]
fn co_adjust<'py>(
    py: Python<'py>,
    scene: &PyScene,
    iterations: usize,
    weights: [f64; 4],
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = config(iterations, weights, seed, false)?;
    let trace = py.detach(|| corrdepth::co_adjust(&scene.bundle, &config)).map_err(py_err)?;
    trace_dict(py, trace)
}

/// Compares reverse-mode gradients with central differences at `depth`
/// (defaults to the ground truth times 1.02). Returns `(passed, max_relative_error)`.
#[pyfunction]
#[pyo3(signature = (scene, loss, depth = None, stop_gradient = false, seed = 0))]
fn grad_check(
    scene: &PyScene,
    loss: &str,
    depth: Option<Vec<Vec<f64>>>,
    stop_gradient: bool,
    seed: u64,
) -> PyResult<(bool, f64)> {
    let id: LossId = loss.parse().map_err(py_err)?;
    let depth = match depth {
        Some(d) => depth_map(d)?,
        None => scene.bundle.depth_gt.scaled(1.02).map_err(py_err)?,
    };
    let inputs = LossInputs {
        intrinsics: &scene.bundle.intrinsics,
        twist: scene.twist,
        depth: &depth,
        flow: &scene.bundle.flow_gt,
        image_t: &scene.bundle.image_t,
        image_s: &scene.bundle.image_s,
        alpha: 0.85,
        stop_gradient,
    };
    let options = FdOptions { seed, ..Default::default() };
    let report = corrdepth::finite_difference_check(id, &inputs, &options).map_err(py_err)?;
    Ok((report.passed, report.max_relative_error))
}

#[pymodule]
#[pyo3(name = "corrdepth")]
fn corrdepth_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyMotion>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(rigid_flow, m)?)?;
    m.add_function(wrap_pyfunction!(rotational_flow, m)?)?;
    m.add_function(wrap_pyfunction!(divergence, m)?)?;
    m.add_function(wrap_pyfunction!(triangulate, m)?)?;
    m.add_function(wrap_pyfunction!(cgdc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(dpc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(bsca_loss, m)?)?;
    m.add_function(wrap_pyfunction!(depth_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(recover_depth, m)?)?;
    m.add_function(wrap_pyfunction!(co_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
