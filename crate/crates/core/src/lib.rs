//! Spatio-temporal forecasting of power-system states with a
//! GraphSAGE + GRU model, an AC power-flow data generator and reference
//! baselines.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod evaluation;
pub mod grid;
pub mod model;
pub mod pipeline;
pub mod powerflow;
pub mod training;
