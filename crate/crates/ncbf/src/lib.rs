//! Files, parallel execution, plots and the `ncbf` command line around
//! [`ncbf_core`].

pub mod commands;
pub mod config;
pub mod executor;
pub mod files;
pub mod plots;

pub use commands::Outcome;
pub use executor::Rayon;
