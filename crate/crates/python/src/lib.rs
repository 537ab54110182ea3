//! Python bindings: scenes, cameras, rendering with gradients, the
//! reconciliation operators, the variance decomposition and training runs.

use std::collections::{BTreeMap, HashMap};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use regime_grad::diagnostics::{variance_decompose as decompose, Estimation, RegimeGradientPopulation};
use regime_grad::harness::{run_scenario, Config, ScenarioSpec};
use regime_grad::reconcile::{Operator, ReconcileConfig, Reconciler};
use regime_grad::render::{self as rmod, random_grad_check, GradCheckDraw, LossConfig};
use regime_grad::scene::{
    make_synthetic_scene, perturb_scene, scene_from_text, scene_to_text, BlockKind, BlockVectors, CameraSpec,
    GradientSet, SplatScene,
};
use regime_grad::train::{evaluate, train as train_run};
use regime_grad::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Blocks = BTreeMap<String, Vec<f64>>;

fn blocks_to_dict(b: &BlockVectors) -> Blocks {
    BlockKind::ALL
        .iter()
        .map(|&k| (k.name().to_string(), b[k].clone()))
        .collect()
}

fn dict_to_blocks(d: &HashMap<String, Vec<f64>>) -> PyResult<BlockVectors> {
    for key in d.keys() {
        if BlockKind::from_name(key).is_none() {
            return Err(PyValueError::new_err(format!("unknown block '{key}'")));
        }
    }
    let get = |k: BlockKind| {
        d.get(k.name())
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("missing block '{}'", k.name())))
    };
    let blocks = [
        get(BlockKind::Position)?,
        get(BlockKind::Scale)?,
        get(BlockKind::Rotation)?,
        get(BlockKind::Opacity)?,
        get(BlockKind::Color)?,
    ];
    BlockVectors::from_blocks(blocks).map_err(to_py)
}

fn config_from(overrides: Option<HashMap<String, String>>) -> PyResult<Config> {
    let mut cfg = Config::default();
    let mut pairs: Vec<_> = overrides.unwrap_or_default().into_iter().collect();
    pairs.sort();
    for (k, v) in pairs {
        cfg.set(&k, &v).map_err(to_py)?;
    }
    Ok(cfg)
}

/// A planar Gaussian splat scene.
#[pyclass(name = "Scene", module = "regime_grad_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: SplatScene,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    #[pyo3(signature = (seed, n_splats, extent = 1.0))]
    fn synthetic(seed: u64, n_splats: usize, extent: f64) -> PyResult<Self> {
        let inner = make_synthetic_scene(seed, n_splats, extent).map_err(to_py)?;
        Ok(PyScene { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyScene {
            inner: scene_from_text(text).map_err(to_py)?,
        })
    }

    fn to_text(&self) -> String {
        scene_to_text(&self.inner)
    }

    /// Copy with iid Gaussian noise on every optimizable parameter.
    fn perturbed(&self, seed: u64, sigma: f64) -> PyResult<Self> {
        Ok(PyScene {
            inner: perturb_scene(&self.inner, seed, sigma).map_err(to_py)?,
        })
    }

    /// Parameters as `{block: values}`.
    fn params(&self) -> Blocks {
        blocks_to_dict(&self.inner.params())
    }

    fn with_params(&self, params: HashMap<String, Vec<f64>>) -> PyResult<Self> {
        let b = dict_to_blocks(&params)?;
        Ok(PyScene {
            inner: self.inner.with_params(&b).map_err(to_py)?,
        })
    }

    #[getter]
    fn background(&self) -> [f64; 3] {
        self.inner.background
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &PyScene) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Scene(n_splats={})", self.inner.len())
    }
}

/// Pinhole camera looking straight at the scene plane.
#[pyclass(name = "Camera", module = "regime_grad_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: CameraSpec,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (id, offset, r, f = 48.0, width = 32, height = 32))]
    fn new(id: u32, offset: [f64; 2], r: f64, f: f64, width: usize, height: usize) -> PyResult<Self> {
        Ok(PyCamera {
            inner: CameraSpec::new(id, offset, r, f, width, height).map_err(to_py)?,
        })
    }

    #[getter]
    fn id(&self) -> u32 {
        self.inner.id
    }

    #[getter]
    fn offset(&self) -> [f64; 2] {
        self.inner.offset
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    #[getter]
    fn f(&self) -> f64 {
        self.inner.f
    }

    #[getter]
    fn size(&self) -> (usize, usize) {
        (self.inner.width, self.inner.height)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Camera(id={}, offset=({}, {}), r={}, f={}, size={}x{})",
            c.id, c.offset[0], c.offset[1], c.r, c.f, c.width, c.height
        )
    }
}

/// Renders `scene` and returns `(width, height, pixels)` with pixels in
/// row-major order.
#[pyfunction]
fn render(scene: &PyScene, camera: &PyCamera) -> (usize, usize, Vec<[f64; 3]>) {
    let img = rmod::render(&scene.inner, &camera.inner);
    (img.width, img.height, img.pixels)
}

/// Photometric loss against a render of `target` and its gradient per block.
#[pyfunction]
fn backward(scene: &PyScene, camera: &PyCamera, target: &PyScene) -> PyResult<(f64, Blocks)> {
    let t = rmod::render(&target.inner, &camera.inner);
    let (loss, g) = rmod::backward(&scene.inner, &camera.inner, &t, &LossConfig::default()).map_err(to_py)?;
    Ok((loss, blocks_to_dict(&g.blocks)))
}

/// Analytic-vs-central-difference check on one random draw; returns
/// `(pass, {block: max_rel_err})`.
#[pyfunction]
#[pyo3(signature = (seed, n_splats = 8))]
fn grad_check(seed: u64, n_splats: usize) -> PyResult<(bool, BTreeMap<String, f64>)> {
    let draw = GradCheckDraw {
        n_splats,
        ..GradCheckDraw::default()
    };
    let rep = random_grad_check(seed, &draw, &LossConfig::default()).map_err(to_py)?;
    let errs = rep
        .blocks
        .iter()
        .map(|b| (b.kind.name().to_string(), b.max_rel_err))
        .collect();
    Ok((rep.pass(), errs))
}

/// Combines a near and a far gradient with the named operator
/// (`sum`, `project`, `precond`, `normeq`, `minnorm`, `cagrad`, `confgate`).
/// Returns the update and the per-block conflict flags.
#[pyfunction]
#[pyo3(signature = (g_near, g_far, operator = "project", r_near = 1.0, r_far = 1.0, cagrad_c = 0.5, tau = -0.1))]
fn reconcile(
    g_near: HashMap<String, Vec<f64>>,
    g_far: HashMap<String, Vec<f64>>,
    operator: &str,
    r_near: f64,
    r_far: f64,
    cagrad_c: f64,
    tau: f64,
) -> PyResult<(Blocks, BTreeMap<String, bool>)> {
    let op = Operator::from_name(operator, cagrad_c, tau)
        .ok_or_else(|| PyValueError::new_err(format!("unknown operator '{operator}'")))?;
    let mut rec = Reconciler::new(ReconcileConfig::with_operator(op)).map_err(to_py)?;
    let gn = GradientSet::new(dict_to_blocks(&g_near)?, 0, 0);
    let gf = GradientSet::new(dict_to_blocks(&g_far)?, 1, 0);
    let (out, stats) = rec.combine(&gn, r_near, &gf, r_far).map_err(to_py)?;
    let conflicts = BlockKind::ALL
        .iter()
        .map(|&k| (k.name().to_string(), stats.conflict[k.index()]))
        .collect();
    Ok((blocks_to_dict(&out.blocks), conflicts))
}

/// Between/within decomposition of two gradient populations; exhaustive
/// unless `draws` is given.
#[pyfunction]
#[pyo3(signature = (near, far, draws = None, seed = 0))]
fn variance_decompose(
    near: Vec<Vec<f64>>,
    far: Vec<Vec<f64>>,
    draws: Option<usize>,
    seed: u64,
) -> PyResult<BTreeMap<String, Option<f64>>> {
    let pop = RegimeGradientPopulation::from_vectors(near, far, 0).map_err(to_py)?;
    let mode = match draws {
        Some(n_draws) => Estimation::MonteCarlo { n_draws, seed },
        None => Estimation::Exhaustive,
    };
    let r = decompose(&pop, mode).map_err(to_py)?;
    Ok(BTreeMap::from([
        ("sigma2_w".to_string(), Some(r.sigma2_w)),
        ("sigma2_b".to_string(), Some(r.sigma2_b)),
        ("var_r".to_string(), Some(r.var_r)),
        ("var_s".to_string(), Some(r.var_s)),
        ("ratio_predicted".to_string(), r.ratio_predicted),
        ("ratio_measured".to_string(), r.ratio_measured),
    ]))
}

/// Trains on the configured toy benchmark. `overrides` uses the same keys as
/// the command-line `--set` flag. Returns final test metrics and telemetry
/// summaries.
#[pyfunction]
#[pyo3(signature = (overrides = None))]
fn train(py: Python<'_>, overrides: Option<HashMap<String, String>>) -> PyResult<BTreeMap<String, Option<f64>>> {
    let cfg = config_from(overrides)?;
    let spec = ScenarioSpec::from_config(&cfg).map_err(to_py)?;
    let out = py
        .detach(|| -> regime_grad::Result<_> {
            let target = spec.target_scene()?;
            let init = spec.init_scene(&target, spec.base.seed)?;
            let cams = spec.train_cameras()?;
            let test = spec.test_cameras()?;
            let outcome = train_run(&init, &target, &cams, &[], &spec.base)?;
            let partition = regime_grad::grouping::split(&cams, spec.base.partition)?;
            let m = evaluate(&outcome.scene, &target, &test, Some(&partition), &spec.base.loss)?;
            Ok((outcome, m))
        })
        .map_err(to_py)?;
    let (outcome, m) = out;
    Ok(BTreeMap::from([
        ("iterations".to_string(), Some(outcome.record.iters.len() as f64)),
        ("psnr_all".to_string(), Some(m.all.psnr)),
        ("ssim_all".to_string(), Some(m.all.ssim)),
        ("psnr_near".to_string(), m.near.map(|x| x.psnr)),
        ("psnr_far".to_string(), m.far.map(|x| x.psnr)),
        ("conflict_rate".to_string(), outcome.record.conflict_rate()),
    ]))
}

/// Runs a multi-seed scenario and returns one summary dict per arm.
#[pyfunction]
#[pyo3(signature = (overrides = None))]
fn scenario(py: Python<'_>, overrides: Option<HashMap<String, String>>) -> PyResult<Vec<BTreeMap<String, Py<PyAny>>>> {
    let cfg = config_from(overrides)?;
    let spec = ScenarioSpec::from_config(&cfg).map_err(to_py)?;
    let out = py.detach(|| run_scenario(&spec)).map_err(to_py)?;
    out.report
        .arms
        .iter()
        .map(|a| {
            Ok(BTreeMap::from([
                ("arm".to_string(), a.arm.clone().into_pyobject(py)?.into_any().unbind()),
                ("n".to_string(), a.n.into_pyobject(py)?.into_any().unbind()),
                (
                    "psnr_mean".to_string(),
                    a.psnr_mean.into_pyobject(py)?.into_any().unbind(),
                ),
                (
                    "psnr_std".to_string(),
                    a.psnr_std.into_pyobject(py)?.into_any().unbind(),
                ),
                (
                    "ssim_mean".to_string(),
                    a.ssim_mean.into_pyobject(py)?.into_any().unbind(),
                ),
            ]))
        })
        .collect()
}

#[pymodule]
fn regime_grad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyCamera>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(backward, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(reconcile, m)?)?;
    m.add_function(wrap_pyfunction!(variance_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(scenario, m)?)?;
    Ok(())
}
