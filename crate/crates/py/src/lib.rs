//! Python module `gridcast`: the synthetic grid, power-flow dataset
//! generation and the evaluation metrics, over plain lists.

use gridcast_core::autodiff::Tensor;
use gridcast_core::evaluation;
use gridcast_core::grid::build_nrel118_like;
use gridcast_core::powerflow::{generate_dataset, synthesize_profiles, DatasetOptions, ProfileConfig, NODE_FEATURES};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

type Frames = Vec<Vec<Vec<f64>>>;

fn to_tensors(frames: &Frames) -> PyResult<Vec<Tensor>> {
    frames
        .iter()
        .map(|rows| {
            if let Some(r) = rows.iter().find(|r| r.len() != NODE_FEATURES) {
                return Err(PyValueError::new_err(format!("rows need {NODE_FEATURES} features, got {}", r.len())));
            }
            Tensor::matrix(rows.len(), NODE_FEATURES, rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
        })
        .collect()
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(NODE_FEATURES).map(<[f64]>::to_vec).collect()
}

/// Bus count, branch list `(from, to)` and node degrees of the seeded
/// 118-bus network.
#[pyfunction]
fn synthetic_grid(seed: u64) -> (usize, Vec<(usize, usize)>, Vec<usize>) {
    let g = build_nrel118_like(seed);
    let branches = g.branches().iter().map(|b| (b.from, b.to)).collect();
    (g.n_buses(), branches, g.node_degrees())
}

/// Hourly node states `[hour][bus][v_mag, v_ang_deg, p_mw, q_mvar]`.
#[pyfunction]
fn generate(seed: u64, hours: usize) -> PyResult<Frames> {
    let g = build_nrel118_like(seed);
    let p = synthesize_profiles(&g, hours, seed, &ProfileConfig::default())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let ds = generate_dataset(&g, &p, &DatasetOptions::default()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(ds
        .snapshots
        .iter()
        .map(|s| s.node.chunks(NODE_FEATURES).map(<[f64]>::to_vec).collect())
        .collect())
}

/// Per-bus, per-feature RMSE over time.
#[pyfunction]
fn rmse_grid(preds: Frames, targets: Frames) -> PyResult<Vec<Vec<f64>>> {
    let grid = evaluation::rmse_grid(&to_tensors(&preds)?, &to_tensors(&targets)?)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(to_rows(&grid))
}

/// Robustness statistics of one model: per-feature CV of the bus RMSEs,
/// 95th-percentile absolute error and lag-1 error autocorrelation, plus the
/// cross-variable error correlation.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn robustness(
    preds: Frames,
    targets: Frames,
) -> PyResult<(Vec<Option<f64>>, Vec<f64>, Vec<Option<f64>>, Option<f64>)> {
    let (p, t) = (to_tensors(&preds)?, to_tensors(&targets)?);
    let err = |e: evaluation::EvalError| PyValueError::new_err(e.to_string());
    let grid = evaluation::rmse_grid(&p, &t).map_err(err)?;
    let errors = evaluation::error_series(&p, &t).map_err(err)?;
    Ok((
        evaluation::cv(&grid).to_vec(),
        evaluation::p95_abs_err(&errors).to_vec(),
        evaluation::rho1(&errors).to_vec(),
        evaluation::cross_var_corr(&errors),
    ))
}

#[pymodule]
fn gridcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(synthetic_grid, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(rmse_grid, m)?)?;
    m.add_function(wrap_pyfunction!(robustness, m)?)?;
    Ok(())
}
