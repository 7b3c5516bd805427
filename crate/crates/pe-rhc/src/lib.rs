//! Online receding-horizon control of an unknown constrained linear system.
//!
//! The crate simulates a plant `x_{t+1} = A x_t + B u_t` whose parameters are
//! unknown to the controller, identifies them online from noisy state
//! observations, and regulates the plant with a receding-horizon controller
//! whose input is perturbed along data-dependent directions so that the
//! closed loop stays persistently exciting. Episodes are split into
//! doubling-length intervals; estimates, confidence sets and perturbation
//! magnitudes refresh at interval boundaries.

pub mod cli;
pub mod controller;
pub mod costs;
pub mod estimator;
pub mod explorer;
pub mod linsys;
pub mod metrics;
pub mod rhc;
