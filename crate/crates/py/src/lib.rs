//! Python bindings: model construction, checkpoints, inference, pruning
//! primitives, codec helpers and metrics.

use std::collections::BTreeSet;
use std::path::PathBuf;

use loopprune_core::codec::{self, Image8, QuantSpec};
use loopprune_core::config::RunConfig;
use loopprune_core::metrics::{self, RdCurve, RdPoint};
use loopprune_core::model::{self, LayerRef, ModelState};
use loopprune_core::pipeline::{self, Logger};
use loopprune_core::prune::{self, PrunePlan};
use loopprune_core::{Error, Tensor};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for loopprune_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A UCLF network with its parameters, sparsity masks and prune history.
#[pyclass(name = "Model", module = "loopprune", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelState,
}

#[pymethods]
impl PyModel {
    /// Full-topology network at `width_scale` (1.0 gives full width).
    #[staticmethod]
    #[pyo3(signature = (width_scale = 1.0, seed = 0))]
    fn default(width_scale: f64, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            inner: ModelState::build_default_uclf(width_scale, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: model::load_model(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_model(&self.inner, path).py()
    }

    fn param_count(&self) -> usize {
        self.inner.count_parameters()
    }

    fn prunable_layers(&self) -> Vec<String> {
        self.inner
            .spec
            .prunable_layers()
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    /// `(c1, c2, d1, d2)` of every block, stage by stage.
    fn block_budgets(&self) -> Vec<Vec<(usize, usize, usize, usize)>> {
        self.inner
            .spec
            .stages
            .iter()
            .map(|s| s.blocks.iter().map(|b| (b.c1, b.c2, b.d1, b.d2)).collect())
            .collect()
    }

    fn prune_history(&self) -> Vec<String> {
        self.inner.prune_history.clone()
    }

    /// Filters one `height x width` image given as row-major floats in [0, 1].
    fn forward(&self, samples: Vec<f32>, height: usize, width: usize) -> PyResult<Vec<f32>> {
        let x = Tensor::from_vec([1, 1, height, width], samples).py()?;
        Ok(self.inner.forward(&x).py()?.into_data())
    }

    /// Magnitude-prunes the weights of one layer (e.g. `"s2b0.conv1"`);
    /// returns the masked count.
    fn apply_sparsity(&mut self, layer: &str, st: f64) -> PyResult<usize> {
        let layer: LayerRef = layer.parse().py()?;
        if !self.inner.spec.prunable_layers().contains(&layer) {
            return Err(PyValueError::new_err(format!("{layer} is not a prunable layer")));
        }
        prune::apply_sparsity_pruning(self.inner.layer_weight_mut(layer), st).py()
    }

    /// Returns a new model with `channels` of `layer` removed. conv2 and
    /// dense2 removals are applied to both layers of the pair.
    fn remove_channels(&self, layer: &str, channels: Vec<usize>) -> PyResult<PyModel> {
        let layer: LayerRef = layer.parse().py()?;
        let mut plan = PrunePlan::default();
        plan.remove(layer, channels);
        Ok(PyModel {
            inner: prune::apply_structured_pruning(&self.inner, &plan).py()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(width_scale={}, params={})",
            self.inner.spec.width_scale,
            self.inner.count_parameters()
        )
    }
}

/// PSNR of two 8-bit images of equal size (peak 255).
#[pyfunction]
fn psnr(a: Vec<u8>, b: Vec<u8>, width: usize, height: usize) -> PyResult<f64> {
    let a = Image8::new(width, height, a).py()?;
    let b = Image8::new(width, height, b).py()?;
    metrics::psnr_images(&a, &b).py()
}

/// `(bd_rate_percent, bd_psnr_db)` of `test` against `anchor`; both are
/// lists of `(rate_bits, psnr_db)`.
#[pyfunction]
fn bd_metrics(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> PyResult<(f64, f64)> {
    let curve = |pts: Vec<(f64, f64)>| {
        RdCurve::new(pts.into_iter().map(|(rate, psnr)| RdPoint { rate, psnr }).collect())
    };
    let r = metrics::bd_metrics(&curve(anchor).py()?, &curve(test).py()?).py()?;
    Ok((r.bd_rate, r.bd_psnr))
}

/// Block-DCT quantization of an 8-bit image at `qp`.
#[pyfunction]
fn degrade(samples: Vec<u8>, width: usize, height: usize, qp: i32) -> PyResult<Vec<u8>> {
    let img = Image8::new(width, height, samples).py()?;
    Ok(codec::degrade(&img, QuantSpec::new(qp)).py()?.samples)
}

/// Entropy of the quantized DCT indices, in bits.
#[pyfunction]
fn rate_proxy(samples: Vec<u8>, width: usize, height: usize, qp: i32) -> PyResult<f64> {
    let img = Image8::new(width, height, samples).py()?;
    codec::rate_proxy(&img, QuantSpec::new(qp)).py()
}

/// Channels whose statistic is below `ct`, keeping at least one per layer.
#[pyfunction]
fn redundant_channels(stats: Vec<f64>, ct: f64) -> BTreeSet<usize> {
    let layer: LayerRef = "s1b0.conv1".parse().expect("static layer name");
    let stats = prune::ActivationStats {
        layers: [(layer, stats)].into_iter().collect(),
    };
    prune::identify_redundant_channels(&stats, ct)
        .removals
        .remove(&layer)
        .unwrap_or_default()
}

/// Runs one workflow command (`gen-data`, `train`, `prune` or `eval`)
/// exactly like the CLI; returns its one-line summary.
#[pyfunction]
#[pyo3(signature = (command, config, overrides = Vec::new(), quiet = true))]
fn run(command: &str, config: PathBuf, overrides: Vec<String>, quiet: bool) -> PyResult<String> {
    let cfg = RunConfig::load(&config, &overrides).py()?;
    let log = Logger { quiet };
    match command {
        "gen-data" => {
            let m = pipeline::gen_data(&cfg, &log).py()?;
            Ok(format!("{} patch pairs", m.entries.len()))
        }
        "train" => {
            let s = pipeline::train(&cfg, &log).py()?;
            Ok(format!("validation PSNR {:.4} dB", s.best_psnr))
        }
        "prune" => Ok(pipeline::prune(&cfg, None, &log).py()?.to_string()),
        "eval" => {
            let mut inputs = vec![cfg.output_dir.join(pipeline::BASELINE_CKPT)];
            let pruned = cfg.output_dir.join(pipeline::PRUNED_CKPT);
            if pruned.is_file() {
                inputs.push(pruned);
            }
            Ok(pipeline::eval(&cfg, &inputs, &log).py()?.report)
        }
        other => Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    }
}

#[pymodule]
fn loopprune(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(bd_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(rate_proxy, m)?)?;
    m.add_function(wrap_pyfunction!(redundant_channels, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
