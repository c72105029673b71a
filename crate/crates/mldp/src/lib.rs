//! Experiment harness around `mldp-core`: a JSON configuration schema shared
//! by every subcommand, a scoped-thread sample runner with deterministic
//! index-ordered output, CSV/JSON artifact writers with reproducible numeric
//! formatting, and a run manifest carrying a semantic config hash.
//!
//! The `mldp` binary in this crate wires these pieces to the library
//! operations: `verify-conditions`, `skeleton`, `minimize-action`,
//! `simulate`, and `sweep`.

pub mod config;
pub mod io;
pub mod manifest;
pub mod runner;
