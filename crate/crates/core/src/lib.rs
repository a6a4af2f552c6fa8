//! Debiasing toolkit for video scene graph generation.
//!
//! * [`numeric`]: dense linear algebra, activations, attention, seeded RNG.
//! * [`mgsm`]: EMA feature memory, gated enhancement, and its bias/variance analytics.
//! * [`irg`]: composite relation features, triplet embeddings and the iterative
//!   relation generator loop.
//! * [`infotheory`]: entropy, KL divergence, confusion matrices.
//! * [`metrics`]: R@K / mR@K under three graph constraints and three task modes.
//! * [`dataio`]: JSON-lines datasets, vocabularies, synthetic long-tail data, reports.
//! * [`cli`]: the command-line front end.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod infotheory;
pub mod irg;
pub mod metrics;
pub mod mgsm;
pub mod numeric;
pub mod scene;

pub use error::{Error, Result};
pub use scene::{BBox, Entity, Relation, SceneGraphFrame};

/// Crate version embedded into every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
