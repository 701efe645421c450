//! Library surface of the orchestration layer; the `parobs` binary is a
//! thin wrapper over these modules.

pub mod config;
pub mod pipeline;
