//! Diagnostic evaluation engine for named-entity-recognition systems.
//!
//! The crate consumes an [`bundle::ExtractionBundle`] and derives scores,
//! error taxonomies, lexical and behavioural statistics, representation
//! analytics and attention similarities from it.

pub mod attention;
pub mod behavioural;
pub mod bundle;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lexical;
pub mod repr;
pub mod session;
pub mod spans;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
