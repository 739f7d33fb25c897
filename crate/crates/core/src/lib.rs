//! Truncated-Wigner simulation of a pumped, damped two-well Bose-Hubbard dimer.
//!
//! The crate integrates the Itô equations for the two mode amplitudes over
//! stochastic trajectories started from Wigner vacuum, accumulates the
//! moments needed by every observable, and converts them into populations,
//! coherence, current, quadrature squeezing, entanglement witnesses and the
//! single-particle pseudo-entropy.

pub mod cli;
pub mod engine;
pub mod model;
pub mod observables;
pub mod sampler;

pub use engine::{
    merge_accumulators, run_ensemble, run_refinement_pair, run_trajectory, standard_error,
    EngineError, EngineOptions, EnsembleConfig, EnsembleReport, MomentAccumulator, Moments,
    TimeGrid,
};
pub use model::{
    classical_steady_state, drift, linear_covariance_oracle, meanfield_fixed_point, Configuration,
    ModelError, SystemParams, TrajectoryState, Well, C64,
};
pub use observables::{
    steady_state, AngleGrid, AngleMin, ObservableError, ObservableRecord, ReducedDensityMatrix,
    SteadyState,
};
