//! Python module `flowsandbox_py`: dataset generation, file IO, baselines and
//! the built-in checks.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use flowsandbox::baselines::{BaselineKind, FlowEstimator};
use flowsandbox::metrics::mean_flow_norm;
use flowsandbox::nets::{checkpoint, FlowExtractorParams};
use flowsandbox::scene_gen::{self, DatasetKind, MultiSceneConfig, SingleSceneConfig};
use flowsandbox::{Error, Mechanism, ScenePair, Vec3};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mechanism(name: &str) -> PyResult<Mechanism> {
    match name {
        "corr" | "correspondence" => Ok(Mechanism::Correspondence),
        "resample" | "resampling" => Ok(Mechanism::Resampling),
        _ => Err(PyValueError::new_err(format!("unknown mechanism {name:?}"))),
    }
}

fn baseline(name: &str, k: usize) -> PyResult<BaselineKind> {
    let b = match name {
        "zero" => BaselineKind::Zero,
        "average" => BaselineKind::Average,
        "knn" => BaselineKind::Knn { k },
        _ => return Err(PyValueError::new_err(format!("unknown baseline {name:?}"))),
    };
    b.validate().map_err(to_py)?;
    Ok(b)
}

fn generate(dataset: &str, scenes: usize, points: usize, mech: &str, seed: u64) -> PyResult<Vec<ScenePair>> {
    let mechanism = mechanism(mech)?;
    let kind = match dataset {
        "single" => DatasetKind::Single(SingleSceneConfig {
            points_per_frame: points,
            mechanism,
            ..Default::default()
        }),
        "multi" => DatasetKind::Multi(MultiSceneConfig {
            points_per_frame: points,
            mechanism,
            ..Default::default()
        }),
        _ => return Err(PyValueError::new_err(format!("unknown dataset {dataset:?}"))),
    };
    match &kind {
        DatasetKind::Single(c) => c.validate(),
        DatasetKind::Multi(c) => c.validate(),
    }
    .map_err(to_py)?;
    scene_gen::gen_dataset(&kind, scenes, seed).map_err(to_py)
}

/// Writes a dataset file and returns `(scene_count, mean_flow_norm)`.
#[pyfunction]
#[pyo3(signature = (path, dataset="single", scenes=100, points=512, mechanism="resample", seed=0))]
fn gen_dataset(path: &str, dataset: &str, scenes: usize, points: usize, mechanism: &str, seed: u64) -> PyResult<(usize, f64)> {
    let pairs = generate(dataset, scenes, points, mechanism, seed)?;
    scene_gen::write_dataset(path, &pairs).map_err(to_py)?;
    let norm = mean_flow_norm(pairs.iter().map(|s| &s.flow)).map_err(to_py)?;
    Ok((pairs.len(), norm))
}

/// Every scene of a dataset file as `(frame1, frame2, flow, seed)`.
#[pyfunction]
fn read_dataset(path: &str) -> PyResult<Vec<(Vec<Vec3>, Vec<Vec3>, Vec<Vec3>, u64)>> {
    let pairs = scene_gen::read_dataset(path).map_err(to_py)?;
    Ok(pairs
        .into_iter()
        .map(|s| {
            (
                s.frame1.points().to_vec(),
                s.frame2.points().to_vec(),
                s.flow.vectors().to_vec(),
                s.seed,
            )
        })
        .collect())
}

/// Aggregate `(epe, zepe, acc01, acc005)` of a baseline or checkpoint.
#[pyfunction]
#[pyo3(signature = (path, baseline="zero", k=1, checkpoint=None))]
fn evaluate(path: &str, baseline: &str, k: usize, checkpoint: Option<&str>) -> PyResult<(f64, f64, f64, f64)> {
    let estimator: Box<dyn FlowEstimator + Sync> = match checkpoint {
        Some(c) => {
            let arrays = checkpoint::read_arrays(c).map_err(to_py)?;
            Box::new(FlowExtractorParams::from_checkpoint_arrays(&arrays).map_err(to_py)?)
        }
        None => Box::new(self::baseline(baseline, k)?),
    };
    let scenes = scene_gen::read_dataset(path).map_err(to_py)?;
    let r = flowsandbox::training::validate(estimator.as_ref(), &scenes).map_err(to_py)?;
    Ok((r.epe, r.zepe, r.acc01, r.acc005))
}

/// Runs the built-in checks; returns `(name, passed, detail)` per check.
#[pyfunction]
fn verify(py: Python<'_>) -> Vec<(String, bool, String)> {
    let results = py.detach(|| flowsandbox::verify::run_checks(&flowsandbox::verify::standard_checks()));
    results.into_iter().map(|r| (r.name, r.passed, r.detail)).collect()
}

#[pymodule]
fn flowsandbox_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
