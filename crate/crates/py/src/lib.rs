//! Python bindings: synthetic data, classifier training, perturbation runs,
//! the gradient-sign baseline and the theory checks.

use std::path::PathBuf;

use pgn_core::data::checkpoint::{load_parameters, save_parameters};
use pgn_core::data::synthetic::{generate, SyntheticConfig};
use pgn_core::data::{load_dataset, save_dataset, Format, Split};
use pgn_core::diffcore::Rng;
use pgn_core::eval::{fgsm_baseline, score, MetricsRow};
use pgn_core::models::{desk_classifier, AccessPolicy, FrozenClassifier, Network};
use pgn_core::theory::verify_all;
use pgn_core::train::{self, train_classifier, ClassifierOptions, LossVariant, Mode, PgnTrainer};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pgn, PgnError, PyException);

fn py_err(e: pgn_core::Error) -> PyErr {
    PgnError::new_err(e.to_string())
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for pgn_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(module = "pgn")]
#[derive(Clone)]
struct Dataset(pgn_core::data::Dataset);

#[pymethods]
impl Dataset {
    /// Procedurally generated 10-class shapes, 3x32x32, pixels in [0, 1].
    #[staticmethod]
    #[pyo3(signature = (n, seed, split = "train"))]
    fn synthetic(n: usize, seed: u64, split: &str) -> PyResult<Self> {
        let split: Split = split.parse().py()?;
        Ok(Self(
            generate(n, seed, split, &SyntheticConfig::default()).py()?,
        ))
    }

    #[staticmethod]
    #[pyo3(signature = (dir, split = "train", format = "idx", classes = 10))]
    fn load(dir: PathBuf, split: &str, format: &str, classes: usize) -> PyResult<Self> {
        let split: Split = split.parse().py()?;
        let format: Format = format.parse().py()?;
        Ok(Self(load_dataset(&dir, split, format, classes).py()?))
    }

    #[pyo3(signature = (dir, format = "idx"))]
    fn save(&self, dir: PathBuf, format: &str) -> PyResult<()> {
        let format: Format = format.parse().py()?;
        save_dataset(&self.0, &dir, format).py()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.images().shape().to_vec()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.classes()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    /// Flat row-major pixel buffer; reshape with `shape`.
    fn images(&self) -> Vec<f32> {
        self.0.images().data().to_vec()
    }
}

#[pyclass(module = "pgn")]
#[derive(Clone)]
struct Classifier(FrozenClassifier);

#[pymethods]
impl Classifier {
    /// Trains the default convolutional classifier and freezes it. Training
    /// stops early once validation accuracy reaches `stop_at`.
    #[staticmethod]
    #[pyo3(signature = (train, val, epochs, seed = 0, stop_at = None))]
    fn train(
        train: &Dataset,
        val: &Dataset,
        epochs: usize,
        seed: u64,
        stop_at: Option<f64>,
    ) -> PyResult<Self> {
        let mut opts = ClassifierOptions::new(epochs, seed);
        opts.stop_at = stop_at;
        let spec = desk_classifier(train.0.classes());
        Ok(Self(
            train_classifier(&train.0, &val.0, spec, &opts).py()?.0,
        ))
    }

    #[staticmethod]
    #[pyo3(signature = (path, classes = 10))]
    fn load(path: PathBuf, classes: usize) -> PyResult<Self> {
        let params = load_parameters(&path).py()?;
        let mut net = Network::new(desk_classifier(classes), &mut Rng::new(0, 1)).py()?;
        net.restore(params).py()?;
        Ok(Self(FrozenClassifier::new(
            net,
            AccessPolicy::WhiteBoxLogits,
        )))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_parameters(&path, self.0.network().params()).py()
    }

    /// The same classifier, answering label queries only.
    fn black_box(&self) -> Self {
        Self(self.0.with_policy(AccessPolicy::BlackBoxLabels))
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.0.policy().name()
    }

    fn checksum(&self) -> String {
        self.0.checksum()
    }

    fn predict(&self, data: &Dataset) -> PyResult<Vec<usize>> {
        self.0.classify(data.0.images()).py()
    }

    /// `(top1, mAP)`; mAP is `None` for a label-only classifier.
    fn score(&self, data: &Dataset) -> PyResult<(f64, Option<f64>)> {
        let (_, top1, map) = score(&self.0, data.0.images(), data.0.labels()).py()?;
        Ok((top1, map))
    }

    /// Top-1 after a one-step gradient-sign attack of size `epsilon`.
    fn fgsm_accuracy(&self, data: &Dataset, epsilon: f32) -> PyResult<f64> {
        let channels = data.0.images().shape()[1];
        let std = match data.0.normalization() {
            pgn_core::data::Normalization::ZeroMeanUnitVar(stats) => stats.std.clone(),
            _ => vec![1.0; channels],
        };
        fgsm_baseline(&self.0, data.0.images(), data.0.labels(), epsilon, &std).py()
    }
}

#[pyclass(module = "pgn")]
#[derive(Clone)]
struct TrainConfig(train::TrainConfig);

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (
        mode, loss = "ls", gamma = None, lam = 1.0, lr = 1e-4, epochs = 20,
        batch_size = 32, seed = 0, black_box = false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mode: &str,
        loss: &str,
        gamma: Option<f64>,
        lam: f32,
        lr: f32,
        epochs: usize,
        batch_size: usize,
        seed: u64,
        black_box: bool,
    ) -> PyResult<Self> {
        let mode: Mode = mode.parse().py()?;
        let loss: LossVariant = loss.parse().py()?;
        let mut cfg = train::TrainConfig::new(mode, loss);
        if let Some(g) = gamma {
            cfg.gamma = g;
        }
        cfg.lambda = lam;
        cfg.lr = lr;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        if black_box {
            cfg = cfg.black_box();
        }
        cfg.validate().py()?;
        Ok(Self(cfg))
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!(
            "TrainConfig(mode={}, loss={}, gamma={}, lam={}, lr={}, epochs={}, batch_size={}, seed={}, access={})",
            c.mode, c.loss, c.gamma, c.lambda, c.lr, c.epochs, c.batch_size, c.seed, c.access.name()
        )
    }
}

/// A finished perturbation run: per-epoch metrics plus the trained generator.
#[pyclass(module = "pgn")]
struct PgnRun {
    rows: Vec<MetricsRow>,
    generator: Network,
    lambda: f32,
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("l_d", r.l_d)?;
    d.set_item("l_g", r.l_g)?;
    d.set_item("l_r", r.l_r)?;
    d.set_item("top1", r.top1)?;
    d.set_item("map", r.map)?;
    d.set_item("pos", r.pos)?;
    d.set_item("neg", r.neg)?;
    Ok(d)
}

#[pymethods]
impl PgnRun {
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.rows.iter().map(|r| row_dict(py, r)).collect()
    }

    /// `I + λ G(I)` for every image in `data`, labels unchanged.
    fn perturb(&self, data: &Dataset) -> PyResult<Dataset> {
        let images = data.0.images();
        let j = if self.lambda == 0.0 {
            images.clone()
        } else {
            let m = self.generator.predict(images).py()?;
            pgn_core::models::perturb(images, &m, self.lambda).py()?
        };
        let ds = pgn_core::data::Dataset::new(
            j,
            data.0.labels().to_vec(),
            data.0.classes(),
            data.0.split(),
            data.0.normalization().clone(),
        )
        .py()?;
        Ok(Dataset(ds))
    }
}

/// Trains a generator/discriminator pair against `classifier`. The GIL is
/// released while training.
#[pyfunction]
fn train_pgn(
    py: Python<'_>,
    train: &Dataset,
    classifier: &Classifier,
    config: &TrainConfig,
) -> PyResult<PgnRun> {
    let (data, f, cfg) = (train.0.clone(), classifier.0.clone(), config.0.clone());
    py.allow_threads(move || {
        let mut trainer = PgnTrainer::new(cfg.clone(), &data, &f)?;
        trainer.run()?;
        Ok(PgnRun {
            rows: trainer.rows().to_vec(),
            generator: trainer.generator().clone(),
            lambda: cfg.lambda,
        })
    })
    .py()
}

/// Runs every theory check; returns `(name, deviation, tolerance, passed)`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn verify_theory(seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    Ok(verify_all(seed)
        .py()?
        .into_iter()
        .map(|c| (c.name, c.deviation, c.tolerance, c.passed))
        .collect())
}

#[pymodule]
fn pgn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PgnError", m.py().get_type_bound::<PgnError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Classifier>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<PgnRun>()?;
    m.add_function(wrap_pyfunction!(train_pgn, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theory, m)?)?;
    Ok(())
}
