//! Ground-truth state generation: admittance matrix, AC and DC power flow,
//! synthetic profiles and the hourly snapshot dataset.

mod ac;
mod dataset;
mod dc;
mod profiles;
mod ybus;

use thiserror::Error;

pub use ac::{power_injections, solve_ac_power_flow, InjectionSet, PowerFlowSolution, SolverOptions};
pub use dataset::{
    dispatch, generate_dataset, read_dataset, read_profiles, system_conditions, write_dataset, write_profiles,
    Dataset, DatasetIoError, DatasetOptions, Snapshot, SolverLog, EDGES_HEADER, EDGE_FEATURES,
    EDGE_FEATURE_NAMES, NODES_HEADER, NODE_FEATURES, NODE_FEATURE_NAMES, PROFILES_HEADER,
};
pub use dc::{solve_dc_power_flow, DcFlowSolution};
pub use profiles::{
    clear_sky, regional_capacity, synthesize_profiles, ProfileConfig, ProfileSeries, SUNRISE_HOUR,
    SUNSET_HOUR,
};
pub use ybus::{build_ybus, AdmittanceMatrix};

/// System power base (MVA) for all per-unit quantities.
pub const BASE_MVA: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (max mismatch {final_mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, final_mismatch: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("singular susceptance matrix; is the grid connected?")]
    SingularB,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("power flow failed at timesteps {timesteps:?}")]
    DatasetGeneration { timesteps: Vec<usize> },
}
