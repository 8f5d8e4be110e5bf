//! Session server and command-line runner for realign episodes.

pub mod cli;
pub mod server;
