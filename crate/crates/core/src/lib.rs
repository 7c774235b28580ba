//! Simulation and calibration of an extended Chiarella market model.
//!
//! Log prices move under three groups of traders: fundamentalists pulling
//! the price towards a latent fundamental value, trend followers with a
//! saturating demand on an EWMA trend signal, and noise traders. The crate
//! provides
//!
//! * the model and its simulation ([`model`], [`simulate`]),
//! * extraction of the latent value with a Kalman filter and EM calibration
//!   for linear fundamentalist demand ([`kalman`], [`em`]),
//! * an unscented filter and direct likelihood maximisation for cubic demand
//!   ([`ukf`], [`mle`]),
//! * trend/value regressions, mispricing statistics and the Silverman
//!   multimodality test ([`analysis`]),
//! * monthly CSV ingestion and a batch front end ([`data_io`], [`cli`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod data_io;
pub mod em;
pub mod error;
pub mod kalman;
pub mod mle;
pub mod model;
pub mod simulate;
pub mod ukf;

pub use error::{Error, Result};
pub use model::{MarketState, ModelKind, ModelParams};
