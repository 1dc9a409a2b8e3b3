//! Gaussian filtering and retrodiction for continuously monitored linear
//! bosonic systems.
//!
//! A [`LinearModel`] describes the quadratic Hamiltonian, the linear jump
//! operators and the homodyne measurement channels of an `M`-mode system.
//! From it the crate derives
//!
//! - conditional Gaussian states, propagated forward in time by the filter
//!   ([`trajectory::filter_forward`]),
//! - retrodicted Gaussian effect operators, propagated backward in time from
//!   a final condition ([`trajectory::retrodict_backward`]),
//! - their asymptotic covariance matrices ([`riccati::steady_state`]),
//! - POVM outcome densities and the Gaussian-operator calculus needed to
//!   interpret them ([`gaussian`]),
//! - ready-made coarse-grained optomechanical models together with the
//!   closed-form steady-state variances they must reproduce ([`optomech`]).
//!
//! Covariance matrices follow the symmetrized convention
//! `V_jk = <{r_j - <r_j>, r_k - <r_k>}>`, so the vacuum has `V = I` and
//! diagonal entries are twice the variance.

pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optomech;
pub mod riccati;
pub mod rng;
pub mod trajectory;
pub mod verify;

pub use gaussian::{GaussianEffect, GaussianState};
pub use model::LinearModel;
pub use optomech::{OptomechParams, Scheme};
pub use riccati::{CovarianceSolution, Direction};
pub use trajectory::MeasurementRecord;

