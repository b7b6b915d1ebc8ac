//! Batch experiment runner for the Krylov-Tikhonov solver library:
//! problem generation, accuracy tables, parameter sweeps, and
//! discrepancy-principle runs with CSV/JSON output.

pub mod config;
pub mod runner;
