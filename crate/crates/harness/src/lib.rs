//! IO side of repoport: repository snapshots, task manifests, the LLM
//! gateway, the translation pipeline, the evaluation sandbox, the error
//! atlas files and the metric reports behind the `repoport` CLI.

pub mod atlas_io;
pub mod cli;
pub mod config;
pub mod eval;
pub mod gateway;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod runs;
pub mod snapshot;
pub mod tables;
