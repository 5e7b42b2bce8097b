//! Command implementations and the read-only JSON service behind the
//! `nerscope` binary.

pub mod api;
pub mod commands;
mod openapi;
