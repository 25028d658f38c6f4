//! Allocation-only core of the repoport repository-translation harness.
//!
//! Everything in here is pure computation over in-memory data: the shared
//! domain types, prompt rendering, response parsing, the dependency agent's
//! ordering logic, the chunk agent, the correctness and token-economy
//! metrics, and the log embedding/clustering used by the error atlas. IO,
//! HTTP transports, subprocess sandboxes and the CLI live in the
//! `repoport-harness` crate.

#![no_std]

extern crate alloc;

#[cfg(any(feature = "std", test))]
extern crate std;

pub mod atlas;
pub mod chunk;
pub mod deps;
pub mod extract;
pub mod markers;
pub mod metrics;
pub mod model;
pub mod path;
pub mod prompt;
pub mod stencil;
pub mod tokens;
pub mod tree;

pub use model::*;
pub use path::{PathError, RelPath};
