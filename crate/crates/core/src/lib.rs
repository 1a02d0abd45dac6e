//! Fortification planning for tree-structured distribution networks.
//!
//! Every node `i` of a rooted tree serves `w_i` customers and can be fortified
//! to a level `x_i` in `[0, 1]` at cost `c_i * x_i`. A random disturbance of
//! severity `Y` knocks out every node with `Y >= x_i`, together with everything
//! downstream of it. Given a budget `B`, the solvers in this crate choose levels
//! that maximize the expected number of customers still served,
//! `sum_i w_i F_Y(x_i)`, subject to `x_i <= x_parent(i)`.
//!
//! * [`series`] is exact for chains with S-shaped severity CDFs.
//! * [`tree_lp`] is exact for arbitrary trees under uniform severity.
//! * [`envelope`] solves the concave-envelope relaxation, giving an upper bound.
//! * [`nsa`] is the multi-start network search heuristic for general trees.
//! * [`verification`] holds independent oracles (lattice search, Monte Carlo).

pub mod bench;
pub mod distributions;
pub mod envelope;
pub mod error;
pub mod model;
pub mod nsa;
pub mod series;
pub mod tree_lp;
pub mod verification;

pub use distributions::{concave_envelope, EnvelopeModel, SeverityModel};
pub use error::{Error, Result};
pub use model::{FortificationPlan, GeneratorParams, Instance, NodeSpec, SolveReport, Violation};

/// Absolute tolerance used for feasibility checks throughout the crate.
pub const FEASIBILITY_TOL: f64 = 1e-9;
