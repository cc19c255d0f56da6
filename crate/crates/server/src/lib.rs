//! HTTP service, record store and command line for `memesentinel`.

pub mod api;
pub mod assemble;
pub mod cli;
pub mod config;
pub mod store;
