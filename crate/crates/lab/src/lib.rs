//! IO, file formats, pipeline orchestration, and self-check suites for the
//! desk-scale distillation lab. The algorithms live in `dnkd-core`; this
//! crate wires them to disk artifacts and the `dnkd` command-line tool.

pub mod config;
pub mod formats;
pub mod pipeline;
pub mod verify;
