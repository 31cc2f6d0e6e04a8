//! State reconstruction: maximum-likelihood fits of small states from
//! moment tables, and MPO reconstruction of large states from overlapping
//! reduced density matrices.

pub(crate) mod mle;
mod rdms;
mod recon;

pub use mle::{mle_from_moments, moment_operator, MleOptions, MleResult};
pub use rdms::{local_rdms_from_state, support, LocalSource, Rdm, RdmSet};
pub use recon::{reconstruct_mpo, ReconOptions, ReconstructionReport};
