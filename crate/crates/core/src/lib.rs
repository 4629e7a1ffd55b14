//! Simulator and analysis toolkit for decentralized federated learning on a
//! grid network where a subset of clients is mobile.
//!
//! The crate is organised bottom-up:
//!
//! * [`topology`] places clients on a `G x G` lattice, derives neighbourhoods
//!   and the Metropolis-Hastings mixing matrix, and measures spectral mixing.
//! * [`mobility`] holds the trajectory policies (static, random, DAM, DCM).
//! * [`data`] ingests IDX files or synthetic blobs and splits them across
//!   clients with a label-Dirichlet partition.
//! * [`model`] and [`training`] run the decentralized round loop.
//! * [`analysis`] contains executable checks of the consensus and
//!   convergence bounds over recorded runs.
//! * [`harness`] drives configured Monte Carlo sweeps and writes CSV and SVG
//!   artifacts.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod mobility;
pub mod model;
pub mod seed;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
