//! Graphon and motif-probability inference for W-graphs.
//!
//! A W-graph is observed through its adjacency matrix only. This crate fits
//! Bernoulli stochastic block models (SBM) with variational Bayes EM for a
//! range of block counts, then integrates the variational posteriors to get:
//!
//! - the posterior distribution, mean and standard deviation of the graphon
//!   `W(u, v)` at any point, for a single block count or averaged over block
//!   counts with variational model weights ([`posterior`]);
//! - the posterior mean of the occurrence probability of any small motif
//!   ([`motifs`]).
//!
//! The [`simstudy`] module contains the simulation harness and the
//! real-network pipeline driven by the `wgraph` binary.

pub mod error;
pub mod graph;
pub mod motifs;
pub mod posterior;
pub mod quadrature;
pub mod seed;
pub mod simstudy;
pub mod special;
pub mod vbem;

pub use error::{Error, Result};
pub use graph::{Graph, GraphonSpec, LatentDraw};
pub use motifs::MotifSpec;
pub use vbem::{FitConfig, FitEnsemble, PriorFamily, SbmPrior, VariationalPosterior};
