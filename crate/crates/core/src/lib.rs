//! A desk-scale Transformer encoder laboratory.
//!
//! The crate implements a configurable post-LN encoder forward pass together
//! with the measurements and symmetry transforms used to study rank collapse,
//! LayerNorm rank-neutrality and head-channel non-identifiability, plus a
//! seeded experiment harness that writes CSV/JSON reports.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod symmetry;

pub use error::{LabError, Result};
pub use linalg::Matrix;
