//! Debiased social recommendation via latent exposure-strategy reconstruction.
//!
//! The crate is organized around the data-generation view of logged feedback:
//! items reach users through unobserved exposure strategies, so observed
//! ratings are a biased sample. The model reconstructs the strategy variables
//! inside a variational auto-encoding objective and predicts ratings under a
//! forced-exposure counterfactual. A small discrete structural-causal-model
//! simulator ([`scm`]) provides exact oracles for the identification identity
//! the method rests on, and generates exposure-biased synthetic datasets with
//! known ground-truth strategies.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scm;
pub mod train;
pub mod viz;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
