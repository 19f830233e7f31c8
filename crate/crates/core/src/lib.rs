//! Quadrotor aerobatics workbench.
//!
//! The crate is organised bottom-up: [`dynamics`] simulates the vehicle,
//! [`env`] wraps it into the target-and-command MDP, [`policy`] holds the
//! Lipschitz-constrained networks, [`trainer`] runs on-policy training,
//! [`baselines`] provides classical controllers and [`eval`] measures them.

pub mod baselines;
pub mod controller;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod math;
pub mod policy;
pub mod trainer;
