//! Biclustering of bipartite count networks with the degree-corrected latent
//! block model, fitted by variational EM.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`bigraph`] | sparse adjacency with degrees and density |
//! | [`model`] | parameters, posteriors, likelihoods, canonical form |
//! | [`spectral_init`] | spectral clustering of `A A^T` / `A^T A` |
//! | [`vem`] | criterion, M step, E step, fit driver |
//! | [`synth`] | planted-truth generator |
//! | [`eval`] | ARI, confusion, separation, chi-square |
//! | [`cli`] | ingestion, runs, harness, serialization |

pub mod bigraph;
pub mod cli;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod spectral_init;
pub mod synth;
pub mod vem;

pub use bigraph::{build_graph, BipartiteGraph, Side};
pub use error::{Error, Result};
pub use model::{BlockParams, Labels, Posteriors};
pub use spectral_init::SpectralConfig;
pub use synth::{SynthConfig, SynthSample};
pub use vem::{fit, FitConfig, FitResult};
