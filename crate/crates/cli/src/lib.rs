//! Command-line driver: scenario loading, run orchestration, and trace
//! emission for the edge offloading simulator.

pub mod commands;
pub mod config;
pub mod output;
