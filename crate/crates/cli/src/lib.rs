//! Batch front end for the gravity toolkit: configuration, run stages and
//! the on-disk output schemas.

pub mod config;
pub mod run;
pub mod schema;
