//! Sparse autoencoders for embeddings of biological count data.
//!
//! The crate covers the whole experimental loop: simulated hierarchical
//! count data with known generative variables, a small training engine for
//! autoencoders and sparse autoencoders (vanilla, pre-bias and top-k),
//! recovery of hidden variables and connectivity from embeddings, and the
//! automated pipeline that links sparse-autoencoder features to gene-set
//! concepts through differential expression and enrichment tests.

pub mod dge;
pub mod enrichment;
pub mod error;
pub mod features;
pub mod io;
pub mod matching;
pub mod nn;
pub mod pca;
pub mod probe;
pub mod sae;
pub mod sim;
pub mod stats;
pub mod structure;

pub use error::{Error, Result};
