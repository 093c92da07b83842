//! Structural gravity estimation and general-equilibrium counterfactuals for
//! bilateral trade panels.
//!
//! The crate is organised as a pipeline:
//!
//! * [`panel`] codes monetary-regime and agreement dummies for every
//!   directed pair-year;
//! * [`design`] turns a coded panel into covariate columns plus the
//!   exporter-year, importer-year and directional-pair fixed effects;
//! * [`ppml`] fits Poisson pseudo-maximum-likelihood with those effects
//!   absorbed and computes cluster-robust covariances;
//! * [`ge`] runs exact hat algebra counterfactuals on a complete baseline
//!   matrix;
//! * [`io`] reads and writes the delimited file formats, completes the
//!   baseline matrix and generates synthetic panels.

pub mod absorb;
pub mod design;
pub mod error;
pub mod ge;
pub mod io;
pub mod panel;
pub mod ppml;

pub use error::{GravityError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
