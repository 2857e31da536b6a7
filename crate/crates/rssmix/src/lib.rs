//! Bayesian estimation of finite normal-mixture parameters from
//! imperfect ranked set samples (RSS).
//!
//! The crate provides:
//!
//! - densities and samplers for normal mixtures and their order
//!   statistics ([`mixture`], [`normal`], [`draws`]);
//! - simulation of imperfectly ranked samples through a noisy
//!   concomitant, plus estimation of the misplacement probability
//!   matrix from repeated rankings ([`design`]);
//! - the latent-variable augmentation of the RSS likelihood
//!   ([`latent`]) and the EM step that re-estimates the misplacement
//!   matrix inside the sampler ([`em`]);
//! - the SRS conjugate Gibbs sampler and the RSS
//!   Metropolis-within-Gibbs sampler ([`sampler`]);
//! - chain post-processing and replicated-study summaries
//!   ([`analysis`]);
//! - reproducible stream derivation for parallel replicates
//!   ([`stream`]).
//!
//! Conventions: component indices `j` are 0-based; ranks `r`, `h` are
//! 1-based matching the usual order-statistic notation. The
//! inverse-gamma distribution is parameterized by (shape, rate) with
//! mean rate/(shape-1).

pub mod analysis;
pub mod design;
pub mod draws;
pub mod em;
pub mod error;
pub mod latent;
pub mod mixture;
pub mod normal;
pub mod sampler;
pub mod stream;

pub use error::{Error, Result};
pub use mixture::MixtureParams;
