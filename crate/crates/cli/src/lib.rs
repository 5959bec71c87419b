//! Command-line front end: commands map one-to-one onto library operations
//! or orchestrator endpoints.

pub mod client;
pub mod commands;
