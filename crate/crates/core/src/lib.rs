//! Communication-efficient quasi-Newton optimization for the client-server setting.
//!
//! The server runs BFGS on the Douglas-Rachford envelope of the dual of
//!
//! ```text
//! minimize_x  Σᵢ fᵢ(x) + (λ/2)‖x‖²
//! ```
//!
//! and each client only ever solves the strongly convex proximal subproblem
//! `argmin_x fᵢ(x) + cᵀx + (γ/2)‖x‖²` for a coefficient vector `c` it keeps
//! in sync from the differences the server broadcasts. Per round a client
//! downloads one d-vector and uploads one d-vector plus O(1) scalars.
//!
//! Step sizes are chosen without a line search: a cheap server-side test on
//! the previous round's statistics decides whether a unit step is worth
//! trying at all, and only then is the envelope value at the trial point
//! requested from the clients.
//!
//! Crate layout:
//! - [`problem`]: loss oracles and the hyperparameter record.
//! - [`data`]: LIBSVM parsing, synthetic data and label-sorted partitioning.
//! - [`envelope`]: stacked vectors and envelope gradient/value assembly.
//! - [`client`]: the proximal solver and the client state machine.
//! - [`bfgs`]: inverse-Hessian maintenance.
//! - [`stepsize`]: the q statistic, acceptance conditions and baseline policies.
//! - [`protocol`]: downlink/uplink messages and their scalar costs.
//! - [`orchestrator`]: the simulated protocol driver, cost ledger and traces.
//! - [`cli`]: experiment configuration, CSV output and policy comparison.

pub mod bfgs;
pub mod cli;
pub mod client;
pub mod data;
pub mod envelope;
pub mod error;
pub mod orchestrator;
pub mod problem;
pub mod protocol;
pub mod stepsize;

pub use error::{Error, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
