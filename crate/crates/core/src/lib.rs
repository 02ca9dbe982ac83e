//! Quasiperiodically forced scalar flows: integration with variational
//! equations, return maps, invariant graphs, saddle-node location and
//! classification, box counting, and a numerical audit of the standing
//! hypotheses for the radial logistic family.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod audit;
pub mod bifurcation;
pub mod error;
pub mod experiment;
pub mod field;
pub mod flow;
pub mod fractal;
pub mod graphs;
pub mod ode;
pub mod return_map;
pub mod torus;

pub use error::{Error, Result};
