//! Backstepping boundary stabilization of linear heterodirectional
//! hyperbolic systems, with the linearized two-layer Saint-Venant model as
//! the worked instance.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bilayer;
pub mod commands;
pub mod config;
pub mod controller;
pub mod error;
pub mod field;
pub mod hetero;
pub mod io;
pub mod kernel;
pub mod lyapunov;
pub mod poly;
pub mod quadrature;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
