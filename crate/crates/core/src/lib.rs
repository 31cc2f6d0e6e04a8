//! Simulation and tomography of sequentially emitted 2×n photonic cluster
//! states.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod emitter;
pub mod entangle;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod measure;
pub mod mpo;
pub mod noise;
pub mod ptomo;
pub mod sites;
pub mod state;
pub mod tomo;

pub use error::{Error, Result};
pub use mpo::{Mpo, Mps, Truncation, TruncationReport};
pub use sites::SiteLabel;
pub use state::{DensityMatrix, PureState, SiteOperator};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
