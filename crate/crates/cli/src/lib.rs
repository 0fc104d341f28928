//! Library surface of the harness so integration tests can drive the same
//! code paths as the binary.

pub mod commands;
pub mod config;
pub mod report;
