//! Instance segmentation from instance-aware boundary maps.
//!
//! The crate turns a boundary probability map and a semantic map into
//! classed, scored instance masks, and ships the supporting numerics: the
//! weighted boundary and contrastive losses with analytic gradients, the
//! mutual-attention forward pass, mask mAP evaluation and a synthetic scene
//! generator used for end-to-end checks.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod losses;
pub mod mep;
pub mod raster;
pub mod synth;

#[doc(hidden)]
pub mod cli;

pub use error::{Error, Result};
pub use raster::{BinaryMask, LabelMap, ProbMap, SemanticMap};
