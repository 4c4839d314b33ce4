//! Command line entry points and the HTTP service around the mdforge core.

pub mod app;
pub mod cli;
pub mod commands;
pub mod service;
