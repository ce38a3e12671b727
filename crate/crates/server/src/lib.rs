//! HTTP API and command-line driver for the coachbot engine.

pub mod api;
pub mod cli;
