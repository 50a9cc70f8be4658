//! Concentration control for a continuous stirred-tank reactor.
//!
//! The crate simulates the tank, identifies a neural one-step predictor of
//! the product concentration from excitation data, and closes the loop with
//! a receding-horizon controller that optimizes the predicted response.
//!
//! Modules follow the pipeline order:
//!
//! * [`plant`] - tank dynamics, fixed-step integration, equilibria
//! * [`narx`] - lagged-regressor neural predictor and its jacobians
//! * [`training`] - excitation design, data generation, weight fitting, model checks
//! * [`mpc`] - horizon cost, derivatives, damped Gauss-Newton input search
//! * [`experiment`] - configuration, end-to-end pipeline, closed-loop runs, file formats

pub mod error;
mod fsio;
pub mod experiment;
pub mod mpc;
pub mod narx;
pub mod plant;
pub mod training;

pub use error::{Error, Result};
