//! Sample-based stochastic MPC for linear systems with bounded additive
//! disturbances of unknown distribution.
//!
//! The offline phase ([`offline`]) propagates sampled disturbance sequences
//! through the pre-stabilized closed loop and extracts per-time, per-row
//! quantile bounds. The online phase ([`adaptive`], [`mpc`]) adjusts the
//! constraint tightening of a condensed MPC problem using the disturbances
//! realized so far. [`sim`] and [`roa`] run closed-loop experiments against a
//! fixed-tightening baseline.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod adaptive;
pub mod error;
pub mod linops;
pub mod model;
pub mod mpc;
pub mod offline;
pub mod qp;
pub mod rng;
pub mod roa;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    BoxSupport, ConstraintSpec, DisturbanceModel, ExampleId, Generator, HalfSpaces, LtiSystem, Scenario, TaskSpec,
};

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;
