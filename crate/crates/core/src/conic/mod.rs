//! Feasibility of second-order-cone constraint systems.
//!
//! A [`SocProgram`] holds constraints of the form
//!
//! ```text
//! ‖A·v + b‖ ≤ cᵀv + d        (second-order cone)
//!          0 ≤ cᵀv + d        (linear)
//! ```
//!
//! [`solve_feasibility`] decides whether some `v` satisfies all of them by
//! minimizing a single slack `s` added to every right-hand side, using a
//! log-barrier path-following method. See [`solver`] for the details.

mod program;
mod solver;

pub use program::{LinearConstraint, SocConstraint, SocProgram, SparseRow};
pub use solver::{solve_feasibility, FeasibilityStatus, FeasibilityVerdict, SolverSettings};
