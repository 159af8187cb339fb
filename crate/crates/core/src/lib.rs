//! Query-modulated object detection at desk scale.
//!
//! The crate covers the whole loop: reading detection groundtruth
//! ([`annotations`]), synthesizing label and location queries from it
//! ([`querysynth`], [`grid`]), encoding them as k-hot vectors ([`encoding`]),
//! training a small query-modulated detector next to a plain baseline
//! ([`toydet`]) on generated shape images ([`shapes`]), and scoring both with
//! class-agnostic AP ([`evaluation`]).

pub mod annotations;
pub mod cli;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod provenance;
pub mod querysynth;
pub mod records;
pub mod rng;
pub mod shapes;
pub mod toydet;

pub use error::{Error, Result};
