//! Stage-by-stage pipeline around `raregan-core`: configuration, artifact
//! I/O and the command implementations behind the `raregan` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;
