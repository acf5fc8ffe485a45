//! Variational Bayesian phylogenetics with mixture approximations.
//!
//! The crate provides subsplit Bayesian networks over tree topologies,
//! amortized LogNormal branch-length models, the pruning likelihood under
//! JC69, multi-sample mixture bounds with their VIMCO gradient estimator,
//! a fully enumerable two-level categorical toy model, and a small
//! parsimony oracle, together with the file formats (FASTA, Newick tree
//! lists, reference posteriors, checkpoints) and a training loop.

pub mod alignment;
pub mod branch;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod math;
pub mod mixture;
pub mod newick;
pub mod objective;
pub mod opt;
pub mod oracle;
pub mod parsimony;
pub mod rng;
pub mod sbn;
pub mod sim;
pub mod taxa;
pub mod topology;
pub mod toy;
pub mod train;

pub use error::{Error, Result};

pub use rand;
