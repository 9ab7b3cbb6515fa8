//! Simulation and inference for latent-infectiousness endemic-epidemic
//! count models on geography-by-age surveillance panels.
//!
//! The crate is organised around the life cycle of an analysis:
//!
//! - [`panel`]: incidence panels, populations, adjacency orders and
//!   population-weighted distance matrices, with CSV ingestion.
//! - [`mixing`]: column-stochastic geographic and age-group mixing weights,
//!   the generative contact-matrix prior and the eigen-deformation family.
//! - [`dgp`]: forward simulators for the rare-disease (negative binomial) and
//!   outbreak (beta-binomial) instances, plus the scenario grid.
//! - [`posterior`]: log-posterior densities with hand-coded gradients on an
//!   unconstrained parameter vector.
//! - [`sampler`]: multinomial NUTS with windowed diagonal adaptation and
//!   split-R̂ / ESS diagnostics.
//! - [`forecast`]: posterior-predictive simulation and log scores.
//! - [`oracle`]: closed-form one-step conditional moments and Monte Carlo
//!   checks against them.
//!
//! All random number generation goes through [`rng::stream`], a ChaCha8
//! generator addressed by `(seed, stream)`, so results are reproducible
//! across runs and platforms.

// `!(x > 0.0)` is the NaN-rejecting check used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dgp;
pub mod dist;
pub mod error;
pub mod forecast;
pub mod kv;
pub mod mixing;
pub mod oracle;
pub mod panel;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
pub use mixing::{AgeMixing, ContactMatrix, ContactPriorHyper, GeoMixing};
pub use panel::{PanelData, SpatialStructure, TractTable};
pub use posterior::{LogDensity, Posterior, PriorSpec, Variant};
pub use sampler::{DrawSet, SamplerConfig};
