//! Sandwich bounds on the rate-distortion function of a memoryless source,
//! estimated from samples.
//!
//! [`upper`] trains achievable `(D, R)` points, [`lower`] trains intercepts of
//! supporting lines, and [`sandwich`] compares the two on a distortion grid.
//! [`oracles`] gives exact curves for Gaussian and discrete sources.

pub mod autodiff;
pub mod oracles;
pub mod sources;
pub mod stats;
pub mod upper;
pub mod lower;
pub mod sandwich;
pub mod cli;
