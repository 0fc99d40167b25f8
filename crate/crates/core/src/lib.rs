//! Core of the replicator platform.
//!
//! The crate is organised around the life cycle of an archived piece of
//! research software:
//!
//! * [`template`] – computation templates, the single JSON file describing an
//!   interactive computation (parameters, input files, command, outputs).
//! * [`substitute`] – placeholder scanning and value substitution that turns a
//!   template plus user bindings into a [`substitute::MaterializedComputation`].
//! * [`backend`] – sandboxed, resource-limited execution of materialized
//!   computations with a bounded worker pool.
//! * [`capture`] – workspace capture, installation-script and container-recipe
//!   emission, recipe linting.
//! * [`registry`] – multi-modal artifact datasets with persistent identifiers,
//!   review checklist and the sustainability ladder.
//! * [`crosswalk`] – declarative metadata extraction into registry blocks.

#![forbid(unsafe_op_in_unsafe_fn)]

pub mod backend;
pub mod capture;
pub mod crosswalk;
pub mod finding;
pub mod paths;
pub mod registry;
pub mod substitute;
pub mod template;

pub use finding::{Finding, Severity};

use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
