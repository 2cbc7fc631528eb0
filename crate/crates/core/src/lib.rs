//! Estimate how a treatment changes the outcome gap between two groups,
//! split that change into within-cell and composition components, and
//! quantify the within share (kappa), with a regression discontinuity
//! estimator as the effect backend, cluster-aware bootstrap inference, and a
//! synthetic-population oracle for end-to-end verification.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod decomp;
pub mod infer;
pub mod io;
pub mod error;
pub mod model;
pub mod rd;
pub mod report;
pub mod synth;
pub mod wls;

pub use error::{Error, ErrorClass, Result};
