//! Python bindings. Images cross the boundary as flat row-major lists with
//! an explicit `(height, width)`; RGB is channel-planar (all R, then G, then B).

use std::collections::HashMap;

use mhenet::data::{synth_sample, synth_samples};
use mhenet::metrics::{evaluate_pair, MaskPair};
use mhenet::network::{parameter_census, Ablation, Network, NetworkConfig};
use mhenet::params::ParamStore;
use mhenet::train::{TrainConfig, Trainer};
use mhenet::{checkpoint, gradsuite, Real, Shape, Tensor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor(c: usize, h: usize, w: usize, data: Vec<f64>) -> PyResult<Tensor> {
    Tensor::from_vec(Shape::new(1, c, h, w), data.into_iter().map(|v| v as Real).collect()).map_err(py_err)
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Network plus its parameters.
#[pyclass(name = "Model", module = "mhenet_py")]
struct PyModel {
    net: Network,
    params: ParamStore,
}

#[pymethods]
impl PyModel {
    /// `ablate` is a comma list such as `"ghem,adfm"`, `"depth"` or `"row3"`.
    #[new]
    #[pyo3(signature = (size=416, channels=None, ablate=None, seed=0, desk=false))]
    fn new(size: usize, channels: Option<usize>, ablate: Option<&str>, seed: u64, desk: bool) -> PyResult<Self> {
        let mut cfg = if desk {
            NetworkConfig::desk(size, channels.unwrap_or(16))
        } else {
            NetworkConfig {
                input_size: [size, size],
                ..NetworkConfig::default()
            }
        };
        if let Some(c) = channels {
            cfg.channels = c;
        }
        if let Some(list) = ablate {
            cfg.ablation = Ablation::parse_list(list).map_err(py_err)?;
        }
        let net = Network::new(cfg).map_err(py_err)?;
        let params = net.init_params(seed);
        Ok(PyModel { net, params })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (net, params) = checkpoint::load(path, None).map_err(py_err)?;
        Ok(PyModel { net, params })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(path, &self.net.config, &self.params).map_err(py_err)
    }

    #[getter]
    fn input_size(&self) -> (usize, usize) {
        let [h, w] = self.net.config.input_size;
        (h, w)
    }

    #[getter]
    fn channels(&self) -> usize {
        self.net.config.channels
    }

    /// Trainable parameter count per top-level module, plus `"total"`.
    fn census(&self) -> HashMap<String, usize> {
        let c = parameter_census(&self.params);
        let mut m: HashMap<String, usize> = c.modules.into_iter().collect();
        m.insert("total".into(), c.total);
        m
    }

    /// Returns the three masks `[M1, M2, M3]` at the network input size.
    fn predict(&self, rgb: Vec<f64>, depth: Vec<f64>, height: usize, width: usize) -> PyResult<Vec<Vec<f64>>> {
        let [h, w] = self.net.config.input_size;
        let rgb = tensor(3, height, width, rgb)?.resized(h, w);
        let depth = tensor(1, height, width, depth)?.resized(h, w);
        let masks = self.net.predict(&self.params, &rgb, &depth).map_err(py_err)?;
        Ok(masks.iter().map(flat).collect())
    }

    /// Train on synthetic samples at the model size; returns per-step total loss.
    #[pyo3(signature = (count, steps, lr=1e-3, batch=8, seed=0))]
    fn fit_synthetic(&mut self, count: usize, steps: usize, lr: f64, batch: usize, seed: u64) -> PyResult<Vec<f64>> {
        let data = synth_samples(count, self.net.config.input_size[0], seed).map_err(py_err)?;
        let mut cfg = TrainConfig {
            batch,
            augment: false,
            max_steps: Some(steps),
            seed,
            ..TrainConfig::default()
        };
        cfg.schedule.base = lr as Real;
        let net = Network::new(self.net.config.clone()).map_err(py_err)?;
        let mut trainer = Trainer::new(net, std::mem::take(&mut self.params), cfg).map_err(py_err)?;
        let mut losses = Vec::new();
        let mut epoch = 1;
        let mut result = Ok(());
        while !trainer.finished() {
            let before = losses.len();
            result = trainer
                .run_epoch(&data, epoch, &mut |row| losses.push(row.loss.total as f64))
                .map(|_| ());
            if result.is_err() || losses.len() == before {
                break;
            }
            epoch += 1;
        }
        self.params = trainer.params;
        result.map_err(py_err)?;
        Ok(losses)
    }
}

/// Synthetic sample as a dict with `id`, `rgb`, `depth`, `gt` and `size`.
#[pyfunction]
fn synthetic_sample(py: Python<'_>, size: usize, index: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let s = synth_sample(size, index, seed).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("id", &s.id)?;
    d.set_item("rgb", flat(&s.rgb))?;
    d.set_item("depth", flat(&s.depth))?;
    d.set_item("gt", flat(&s.gt))?;
    d.set_item("size", s.size())?;
    Ok(d.into_any().unbind())
}

/// MAE, weighted F, mean E and S for one prediction against a binary mask.
/// `wfm` is `None` when the mask has no foreground.
#[pyfunction]
fn evaluate(pred: Vec<f64>, gt: Vec<f64>, height: usize, width: usize) -> PyResult<HashMap<String, Option<f64>>> {
    let pair = MaskPair::from_soft_gt(height, width, pred, &gt).map_err(py_err)?;
    let (v, undefined) = evaluate_pair(&pair);
    Ok(HashMap::from([
        ("mae".to_string(), Some(v.mae)),
        ("wfm".to_string(), (!undefined).then_some(v.wfm)),
        ("em".to_string(), Some(v.em)),
        ("sm".to_string(), Some(v.sm)),
    ]))
}

/// Finite-difference check of every block: `(name, max_rel_error, tol, passed)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let checks = gradsuite::run_suite(seed).map_err(py_err)?;
    Ok(checks
        .iter()
        .map(|c| (c.name.clone(), c.max_rel_error as f64, c.tol as f64, c.passed()))
        .collect())
}

#[pymodule]
fn mhenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic_sample, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
