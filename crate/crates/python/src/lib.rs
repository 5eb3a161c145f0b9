//! Python bindings: synthesise data, train, evaluate and explain from Python.
//!
//! Tensors cross the boundary as flat lists plus a shape; reports come back
//! as plain dicts and lists.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::de::DeserializeOwned;
use stanlab::explain::{self, PerturbConfig, Target};
use stanlab::io::{self, SynthConfig};
use stanlab::model::{checkpoint, Stan, StanConfig};
use stanlab::train::TrainConfig;
use stanlab::{metrics, StanError, Tensor};

fn py_err(e: StanError) -> PyErr {
    match e {
        StanError::Config(_) => PyValueError::new_err(e.to_string()),
        StanError::Format { .. }
        | StanError::Checkpoint(_)
        | StanError::Load { .. }
        | StanError::Io { .. }
        | StanError::Json(_) => PyIOError::new_err(e.to_string()),
        StanError::Dimension { .. } | StanError::Contract(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Parse an optional JSON object into a config, defaults when absent.
fn parse<T: DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    json.map_or_else(
        || Ok(T::default()),
        |s| serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("config json: {e}"))),
    )
}

fn to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<PyObject> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any().unbind(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn json_to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<PyObject> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn tensor(data: Vec<f32>, shape: Vec<usize>) -> PyResult<Tensor<f32>> {
    Tensor::new(&shape, data).map_err(py_err)
}

/// Write a planted-event dataset under `out_dir`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, config_json=None))]
fn generate_synthetic(out_dir: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg: SynthConfig = parse(config_json)?;
    io::generate_synthetic(&cfg, out_dir).map_err(py_err)?;
    Ok(std::path::Path::new(out_dir).join("manifest.json").display().to_string())
}

/// Clip ids per split of the dataset at `manifest`.
#[pyfunction]
fn dataset_splits(py: Python<'_>, manifest: &str) -> PyResult<PyObject> {
    let data = io::load_dataset(manifest).map_err(py_err)?;
    let ids: std::collections::BTreeMap<&str, Vec<&str>> = data
        .splits
        .iter()
        .map(|(k, v)| (k.as_str(), v.iter().map(|c| c.id.as_str()).collect()))
        .collect();
    json_to_py(py, &ids)
}

/// The attention head with `f32` parameters.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Stan<f32>,
}

#[pymethods]
impl PyModel {
    /// A freshly initialised model; `config_json` holds model settings.
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: StanConfig = parse(config_json)?;
        Ok(Self {
            inner: Stan::new(cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = checkpoint::load(path).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, serde_json::Value::Null, path).map_err(py_err)
    }

    /// Model settings as a dict.
    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.config)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Forward one clip given flat row-major features. Returns `p`,
    /// `p_cav`, `time` and `space_time` (flat), plus `space` and `p_cam`
    /// when the model has a space path.
    fn forward(
        &self,
        py: Python<'_>,
        audio: Vec<f32>,
        audio_shape: Vec<usize>,
        visual: Vec<f32>,
        visual_shape: Vec<usize>,
    ) -> PyResult<PyObject> {
        let a = tensor(audio, audio_shape)?;
        let v = tensor(visual, visual_shape)?;
        let out = self.inner.forward_features(&a, &v).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("p", out.p.to_f64_vec())?;
        d.set_item("p_cav", out.p_cav.to_f64_vec())?;
        d.set_item("time", out.attention.time.to_f64_vec())?;
        d.set_item("space_time", out.attention.space_time.to_f64_vec())?;
        if let Some(s) = &out.attention.space {
            d.set_item("space", s.to_f64_vec())?;
        }
        if let Some(p) = &out.p_cam {
            d.set_item("p_cam", p.to_f64_vec())?;
        }
        Ok(d.into_any().unbind())
    }

    /// Train on the `train` split of `manifest`, selecting on `val` when
    /// present. Feature extents come from the data. Returns the epoch log.
    #[pyo3(signature = (manifest, train_json=None))]
    fn fit(&mut self, py: Python<'_>, manifest: &str, train_json: Option<&str>) -> PyResult<PyObject> {
        let tc: TrainConfig = parse(train_json)?;
        let data = io::load_dataset(manifest).map_err(py_err)?;
        let train = data.split("train").map_err(py_err)?;
        let val = data.split("val").ok();
        let model = self.inner.clone();
        let out = py
            .allow_threads(|| stanlab::train::train_from(model, &tc, train, val, |_| {}))
            .map_err(py_err)?;
        self.inner = out.selected().clone();
        json_to_py(py, &out.log)
    }

    /// Top-1, mAP and F-score on one split.
    #[pyo3(signature = (manifest, split="test"))]
    fn evaluate(&self, py: Python<'_>, manifest: &str, split: &str) -> PyResult<PyObject> {
        let data = io::load_dataset(manifest).map_err(py_err)?;
        let r = metrics::evaluate(&self.inner, data.split(split).map_err(py_err)?).map_err(py_err)?;
        json_to_py(py, &r)
    }

    /// Pointing-game MAE of the time attention on one split.
    #[pyo3(signature = (manifest, split="test"))]
    fn pointing(&self, py: Python<'_>, manifest: &str, split: &str) -> PyResult<PyObject> {
        let data = io::load_dataset(manifest).map_err(py_err)?;
        let r = explain::pointing_game(&self.inner, data.split(split).map_err(py_err)?).map_err(py_err)?;
        json_to_py(py, &r)
    }

    /// TVD perturbation curve for `target` ("relevant" or "irrelevant").
    #[pyo3(signature = (manifest, target, split="test", perturb_json=None))]
    fn perturb(
        &self,
        py: Python<'_>,
        manifest: &str,
        target: &str,
        split: &str,
        perturb_json: Option<&str>,
    ) -> PyResult<PyObject> {
        let cfg: PerturbConfig = parse(perturb_json)?;
        let target = match target {
            "relevant" => Target::Relevant,
            "irrelevant" => Target::Irrelevant,
            other => return Err(PyValueError::new_err(format!("unknown target {other:?}"))),
        };
        let data = io::load_dataset(manifest).map_err(py_err)?;
        let clips = data.split(split).map_err(py_err)?;
        let curve = py
            .allow_threads(|| explain::perturbation_test(&self.inner, clips, &cfg, target))
            .map_err(py_err)?;
        json_to_py(py, &curve)
    }
}

/// Fraction of instances whose top-ranked class is relevant.
#[pyfunction]
fn top1_accuracy(scores: Vec<Vec<f64>>, labels: Vec<Vec<u8>>) -> PyResult<f64> {
    metrics::top1_accuracy(&scores, &labels).map_err(py_err)
}

#[pyfunction]
fn mean_average_precision(scores: Vec<Vec<f64>>, labels: Vec<Vec<u8>>) -> PyResult<f64> {
    metrics::mean_average_precision(&scores, &labels).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold=0.5))]
fn f_score(scores: Vec<Vec<f64>>, labels: Vec<Vec<u8>>, threshold: f64) -> PyResult<f64> {
    metrics::f_score(&scores, &labels, threshold).map_err(py_err)
}

/// Total variation distance between two prediction vectors.
#[pyfunction]
fn tvd(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    explain::tvd(&p, &q).map_err(py_err)
}

#[pymodule]
fn stanlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_splits, m)?)?;
    m.add_function(wrap_pyfunction!(top1_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(f_score, m)?)?;
    m.add_function(wrap_pyfunction!(tvd, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
