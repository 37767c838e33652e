//! Downlink power control for multi-cell massive MIMO with distributed
//! antenna arrays.
//!
//! The pipeline runs [`scenario`] → [`covariance`] → [`estimation`] →
//! [`sinr`] → [`power`], with [`conic`] providing the feasibility oracle for
//! max-min bisection and [`harness`] driving parameter sweeps.

pub mod conic;
pub mod covariance;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod power;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod sinr;

pub use conic::{solve_feasibility, FeasibilityStatus, FeasibilityVerdict, SocProgram, SolverSettings};
pub use covariance::{build_covariance_set, one_ring_covariance, path_loss, CovarianceMatrix, CovarianceSet, OneRingParams};
pub use error::{Error, Result};
pub use harness::{export, run_sweep, ExperimentSpec, Scheme, SweepPoint, SweepResults};
pub use estimation::{sample_channels, simulate_pilot_and_estimate, ChannelRealization, EstimationSet};
pub use power::{
    build_feasibility_problem, equal_power, maxmin_power, verify_power_constraint, BisectionParams, MaxMinResult,
    PowerCheck, SlackMode,
};
pub use scenario::{build_reference_network, build_random_network, Dimensions, GeometryParams, LinkScalars, NetworkScenario, Point, ScenarioConfig};
pub use sinr::{closed_form_sinr, compute_coefficients, monte_carlo_sinr, PowerAllocation, SinrCoefficients, SinrReport};
